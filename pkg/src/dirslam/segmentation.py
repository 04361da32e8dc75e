"""
DP-vMF directional segmentation with MRF label smoothing.

Clusters are keyed by stable integer ids that are never reused, so
per-surfel label counters stay meaningful after clusters die. Mixture
weights are integrated out (CRP representation).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from dirslam.directional import (LOG_4PI, log_sinh, log_vmf_normalizer, normalize,
                                 sample_vmf)

NEW_CLUSTER = -2

TAU_GRID = np.geomspace(1e-2, 1e4, 512)
LOG_TAU_GRID = np.log(TAU_GRID)
LOG_C3_GRID = log_vmf_normalizer(TAU_GRID)


@dataclass
class BasePrior:
    """Conjugate vMF prior G0 ~ C3(tau)^a exp(b tau mu^T mu0), 0 < b < a."""

    mu0: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    a: float = 1.0
    b: float = 0.3

    def __post_init__(self):
        self.mu0 = normalize(np.asarray(self.mu0, dtype=float))
        if not 0.0 < self.b < self.a:
            raise ValueError(f"prior needs 0 < b < a, got a={self.a}, b={self.b}")


@dataclass
class Cluster:
    mu: np.ndarray
    tau: float
    count: int = 0


class DirectionalModel:
    """Cluster bookkeeping for the DP-vMF mixture."""

    def __init__(self, alpha: float = 1.0, prior: BasePrior | None = None, lam: float = 1.0):
        if alpha < 0 or lam < 0:
            raise ValueError("alpha and lambda must be non-negative")
        self.alpha = alpha
        self.prior = prior or BasePrior()
        self.lam = lam
        self.clusters: dict[int, Cluster] = {}
        self.next_id = 0

    def __len__(self) -> int:
        return len(self.clusters)

    def new_cluster(self, mu, tau, count: int = 0) -> int:
        k = self.next_id
        self.next_id += 1
        self.clusters[k] = Cluster(normalize(np.asarray(mu, dtype=float)), float(tau), count)
        return k

    def arrays(self):
        keys = np.fromiter(self.clusters.keys(), dtype=np.int64, count=len(self.clusters))
        mu = np.array([c.mu for c in self.clusters.values()]).reshape(-1, 3)
        tau = np.array([c.tau for c in self.clusters.values()], dtype=float)
        counts = np.array([c.count for c in self.clusters.values()], dtype=float)
        return keys, mu, tau, counts

    def reconcile(self, labels: np.ndarray):
        """Reset counts from the label array and drop empty clusters."""
        labels = labels[labels >= 0]
        keys, cnt = np.unique(labels, return_counts=True)
        counts = dict(zip(keys.tolist(), cnt.tolist()))
        for k in list(self.clusters):
            c = counts.get(k, 0)
            if c == 0:
                del self.clusters[k]
            else:
                self.clusters[k].count = c


# -- base measure --------------------------------------------------------------


def _log_sinhc(x):
    """log(sinh(x)/x), stable for x >= 0."""
    x = np.asarray(x, dtype=float)
    small = x < 1e-4
    safe = np.where(small, 1.0, x)
    return np.where(small, x * x / 6.0, log_sinh(safe) - np.log(safe))


def base_marginal_closed_form(n, prior: BasePrior):
    """p(n; G0) for a = 1, 0 < b < 1, with mode and concentration integrated out.

    With r = ||n + b mu0||:
        p(n) = b / (4 pi tan(b pi / 2) r) * [(pi r / 2) / sin^2(pi r / 2) - cot(pi r / 2)]
    """
    b = prior.b
    n = np.asarray(n, dtype=float)
    r = np.linalg.norm(n + b * prior.mu0, axis=-1)
    x = 0.5 * np.pi * r
    s = np.sin(x)
    val = b / (4.0 * np.pi * np.tan(0.5 * b * np.pi) * r) * (x / (s * s) - np.cos(x) / s)
    return val if np.ndim(val) else float(val)


def _log_tau_integral(log_f) -> float:
    """log of int_0^inf exp(log_f(tau)) dtau, integrated in log-tau."""
    grid = np.linspace(np.log(1e-8), np.log(1e4), 4001)
    vals = log_f(np.exp(grid)) + grid
    m = vals.max()
    return float(m + np.log(integrate.trapezoid(np.exp(vals - m), grid)))


def base_marginal_quadrature(n, prior: BasePrior):
    """p(n; G0) for any valid (a, b) by one-dimensional quadrature over tau."""
    a, b = prior.a, prior.b
    log_z = _log_tau_integral(lambda t: a * log_vmf_normalizer(t) + LOG_4PI + _log_sinhc(b * t))
    n = np.atleast_2d(np.asarray(n, dtype=float))
    r = np.linalg.norm(n + b * prior.mu0, axis=-1)
    out = np.array([
        np.exp(_log_tau_integral(
            lambda t, ri=ri: (a + 1.0) * log_vmf_normalizer(t) + LOG_4PI + _log_sinhc(ri * t))
            - log_z)
        for ri in r])
    return out if len(out) > 1 else float(out[0])


def base_marginal(n, prior: BasePrior):
    """Marginal density of a unit normal under the base measure."""
    if prior.a == 1.0 and prior.b < 1.0:
        return base_marginal_closed_form(n, prior)
    return base_marginal_quadrature(n, prior)


# -- cluster parameter posterior ------------------------------------------------


def posterior_hyper(normals, prior: BasePrior):
    """(a~, b~, mu0~) of the conjugate posterior given member normals."""
    normals = np.asarray(normals, dtype=float).reshape(-1, 3)
    theta = normals.sum(axis=0) + prior.b * prior.mu0
    return _hyper_from_sum(theta, len(normals), prior)


def _hyper_from_sum(theta, count: int, prior: BasePrior):
    norm = float(np.linalg.norm(theta))
    a_t = prior.a + count
    if norm < 1e-12:
        return a_t, 0.0, prior.mu0.copy()
    return a_t, norm, theta / norm


def tau_log_posterior(a_t: float, b_t: float, tau=TAU_GRID):
    """Unnormalised log marginal posterior of tau (mode integrated out).

    p(tau | .) ~ C3(tau)^a~ * 4 pi sinh(b~ tau) / (b~ tau).
    """
    tau = np.asarray(tau, dtype=float)
    return a_t * log_vmf_normalizer(tau) + LOG_4PI + _log_sinhc(b_t * tau)


def sample_tau(a_t: float, b_t: float, rng: np.random.Generator) -> float:
    # grid is log-spaced, so each cell carries mass proportional to tau
    x = b_t * TAU_GRID
    # log sinhc(x); x >= 1e-2 * b_t so only tiny b_t needs the series
    if b_t * TAU_GRID[0] < 1e-4:
        lsc = _log_sinhc(x)
    else:
        lsc = x + np.log1p(-np.exp(-2.0 * x)) - np.log(2.0 * x)
    logw = a_t * LOG_C3_GRID + lsc + LOG_TAU_GRID
    w = np.exp(logw - logw.max())
    c = np.cumsum(w)
    return float(TAU_GRID[min(np.searchsorted(c, rng.random() * c[-1]), len(c) - 1)])


def sample_params_from_sum(theta, count: int, prior: BasePrior, rng: np.random.Generator):
    a_t, b_t, mu0_t = _hyper_from_sum(theta, count, prior)
    tau = sample_tau(a_t, b_t, rng)
    mu = sample_vmf(mu0_t, b_t * tau, rng)
    return mu, tau


def vmf_param_posterior(normals, prior: BasePrior, rng: np.random.Generator):
    """Draw (mu, tau) of one cluster given its members' normals.

    tau is drawn from its marginal posterior on a fixed log grid, then
    mu | tau ~ vMF(mu0~, b~ tau).
    """
    normals = np.asarray(normals, dtype=float).reshape(-1, 3)
    theta = normals.sum(axis=0) + prior.b * prior.mu0
    return sample_params_from_sum(theta, len(normals), prior, rng)


# -- label conditional ----------------------------------------------------------


def label_log_weights(normal, neighbor_labels, model: DirectionalModel, exclude: int | None = None):
    """Unnormalised log weights over existing clusters plus a new one.

    ``exclude`` is the surfel's own current label, removed from the
    counts. Returns (keys, log_weights) with NEW_CLUSTER as last key.
    """
    keys, mu, tau, counts = model.arrays()
    if exclude is not None and exclude in model.clusters:
        counts[np.flatnonzero(keys == exclude)[0]] -= 1
    nb = np.asarray(neighbor_labels, dtype=np.int64).reshape(-1)
    n_nb = len(nb)
    agree = np.array([np.count_nonzero(nb == k) for k in keys.tolist()], dtype=float)
    with np.errstate(divide="ignore"):
        logw = (model.lam * (agree - n_nb) + np.log(counts)
                + log_vmf_normalizer(tau) + tau * (mu @ np.asarray(normal, dtype=float)))
        log_new = (-model.lam * n_nb + np.log(model.alpha)
                   + np.log(base_marginal(normal, model.prior)))
    return np.append(keys, NEW_CLUSTER), np.append(np.atleast_1d(logw), log_new)


def label_conditional(normal, neighbor_labels, model: DirectionalModel, exclude: int | None = None):
    """Normalised categorical over existing clusters and a new cluster."""
    keys, logw = label_log_weights(normal, neighbor_labels, model, exclude)
    m = np.max(logw)
    p = np.exp(logw - m)
    return keys, p / p.sum()


def sample_categorical(logw: np.ndarray, u: float) -> int:
    """Inversion sampling from unnormalised log weights."""
    p = np.exp(logw - np.max(logw))
    c = np.cumsum(p)
    return min(int(np.searchsorted(c, u * c[-1], side="right")), len(c) - 1)


class _LabelState:
    """Dense working copy of the cluster table for one label pass."""

    def __init__(self, model: DirectionalModel, smap, ids, extra: int = 64):
        self.model = model
        keys, mu, tau, counts = model.arrays()
        k = len(keys)
        cap = k + extra
        self.keys = np.full(cap, -1, dtype=np.int64)
        self.mu = np.zeros((cap, 3))
        self.tau = np.zeros(cap)
        self.counts = np.zeros(cap)
        self.sum_n = np.zeros((cap, 3))
        self.keys[:k], self.mu[:k], self.tau[:k], self.counts[:k] = keys, mu, tau, counts
        with np.errstate(divide="ignore"):
            self.logc = np.log(self.counts)
        self.k = k
        # column of label z sits at col[z + 1]; col[0] covers unlabelled (-1)
        self.col = np.full(model.next_id + extra + 1, -1, dtype=np.int64)
        self.col[keys + 1] = np.arange(k)
        lab = smap.label[:smap.size]
        members = np.flatnonzero((lab >= 0) & smap.alive[:smap.size])
        if len(members):
            cols = self.col[lab[members] + 1]
            ok = cols >= 0
            np.add.at(self.sum_n, cols[ok], smap.normal[members[ok]])
        self.ids = ids
        self.normals = smap.normal[ids]
        self.L = np.full((len(ids), cap), -np.inf)
        if k:
            self.L[:, :k] = log_vmf_normalizer(self.tau[:k]) + self.tau[:k] * (self.normals @ self.mu[:k].T)
        self.log_base = np.log(base_marginal(self.normals, model.prior)).reshape(-1)
        self.log_alpha = np.log(model.alpha) if model.alpha > 0 else -np.inf

    def column(self, label: int) -> int:
        return int(self.col[label + 1]) if label + 1 < len(self.col) else -1

    def set_count(self, j: int, value: float):
        self.counts[j] = value
        self.logc[j] = math.log(value) if value > 0 else -math.inf

    def add_cluster(self, mu, tau) -> int:
        if self.k == len(self.keys):
            grow = len(self.keys)
            self.keys = np.append(self.keys, np.full(grow, -1, dtype=np.int64))
            self.mu = np.vstack([self.mu, np.zeros((grow, 3))])
            self.tau = np.append(self.tau, np.zeros(grow))
            self.counts = np.append(self.counts, np.zeros(grow))
            self.logc = np.append(self.logc, np.full(grow, -np.inf))
            self.sum_n = np.vstack([self.sum_n, np.zeros((grow, 3))])
            self.L = np.hstack([self.L, np.full((len(self.L), grow), -np.inf)])
        j = self.k
        key = self.model.new_cluster(mu, tau)
        if key + 1 >= len(self.col):
            self.col = np.append(self.col, np.full(len(self.col), -1, dtype=np.int64))
        self.col[key + 1] = j
        self.keys[j], self.mu[j], self.tau[j] = key, self.model.clusters[key].mu, tau
        self.L[:, j] = log_vmf_normalizer(tau) + tau * (self.normals @ self.mu[j])
        self.k += 1
        return j

    def refresh(self, j: int, rng):
        mu, tau = sample_params_from_sum(self.sum_n[j] + self.model.prior.b * self.model.prior.mu0,
                                         int(self.counts[j]), self.model.prior, rng)
        self.mu[j], self.tau[j] = mu, tau
        self.L[:, j] = log_vmf_normalizer(tau) + tau * (self.normals @ mu)

    def write_back(self):
        for j in range(self.k):
            key = int(self.keys[j])
            c = self.model.clusters.get(key)
            if c is None:
                continue
            c.mu, c.tau, c.count = self.mu[j].copy(), float(self.tau[j]), int(round(self.counts[j]))


def sweep_labels(smap, graph, model: DirectionalModel, rng: np.random.Generator, ids,
                 refresh: bool = False) -> int:
    """One sequential pass of label sampling over ``ids``.

    With ``refresh=True`` the chosen cluster's (mu, tau) is redrawn right
    after each assignment; this is used when inserting new surfels so
    that fresh clusters sharpen immediately. Returns the number of label
    changes.
    """
    ids = np.asarray(ids, dtype=int)
    if len(ids) == 0:
        return 0
    st = _LabelState(model, smap, ids)
    lam = model.lam
    labels = smap.label
    # python mirrors: with a handful of clusters, scalar math beats small numpy calls
    lab = labels[:smap.size].tolist()
    nbr_rows = graph.nbr[ids].tolist()
    col = st.col.tolist()
    cnt = st.counts[:st.k].tolist()
    log_new = (st.log_alpha + st.log_base).tolist()
    changes = 0
    uniforms = rng.random(len(ids)).tolist()
    exp, log = math.exp, math.log
    for local, i in enumerate(ids.tolist()):
        zi = lab[i]
        j_old = col[zi + 1] if 0 <= zi and zi + 1 < len(col) else -1
        if j_old >= 0:
            cnt[j_old] -= 1
        k = st.k
        logw = st.L[local, :k].tolist()
        for j in range(k):
            c = cnt[j]
            logw[j] = logw[j] + log(c) if c > 0 else -math.inf
        if lam:
            for nb in nbr_rows[local]:
                if nb >= 0:
                    j = col[lab[nb] + 1]
                    if j >= 0:
                        logw[j] += lam
        logw.append(log_new[local])
        m = max(logw)
        if m == -math.inf:
            # nothing admissible (e.g. alpha = 0 and no clusters): keep label
            j_new = j_old
        else:
            acc = 0.0
            cum = []
            for w in logw:
                acc += exp(w - m)
                cum.append(acc)
            target = uniforms[local] * acc
            j_new = k
            for j in range(k + 1):
                if target < cum[j]:
                    j_new = j
                    break
        if j_new == k:
            n_i = st.normals[local]
            theta = n_i + model.prior.b * model.prior.mu0
            mu, tau = sample_params_from_sum(theta, 1, model.prior, rng)
            j_new = st.add_cluster(mu, tau)
            col = st.col.tolist()
            cnt.append(0)
        if j_new >= 0:
            cnt[j_new] += 1
            new_label = int(st.keys[j_new])
            if j_new != j_old:
                n_i = st.normals[local]
                if j_old >= 0:
                    st.sum_n[j_old] -= n_i
                st.sum_n[j_new] += n_i
            if refresh:
                st.counts[:st.k] = cnt
                st.refresh(j_new, rng)
        else:
            new_label = zi
        if new_label != zi:
            changes += 1
            lab[i] = new_label
            labels[i] = new_label
    st.counts[:st.k] = cnt
    st.write_back()
    model.reconcile(labels[:smap.size][smap.alive[:smap.size]])
    return changes


def sample_cluster_params(smap, model: DirectionalModel, rng: np.random.Generator):
    """Redraw (mu_k, tau_k) for every cluster from its members' normals."""
    alive = smap.alive_ids()
    lab = smap.label[alive]
    for key, c in model.clusters.items():
        members = alive[lab == key]
        theta = smap.normal[members].sum(axis=0) + model.prior.b * model.prior.mu0
        c.mu, c.tau = sample_params_from_sum(theta, len(members), model.prior, rng)
        c.count = len(members)


def spatial_order(graph, ids, rng: np.random.Generator) -> np.ndarray:
    """Breadth-first order of ``ids`` over the neighbour graph.

    Components are started from random seeds. Inserting labels in this
    order grows clusters region by region, the way a moving camera adds
    surfels.
    """
    ids = np.asarray(ids, dtype=int)
    if len(ids) == 0:
        return ids
    member = set(ids.tolist())
    adj: dict[int, list] = {i: [] for i in member}
    for i in ids.tolist():
        row = graph.nbr[i]
        for j in row[row >= 0].tolist():
            if j in member:
                adj[i].append(j)
                adj[j].append(i)
    seen: set = set()
    order = []
    for start in rng.permutation(ids).tolist():
        if start in seen:
            continue
        seen.add(start)
        queue = [start]
        head = 0
        while head < len(queue):
            i = queue[head]
            head += 1
            for j in adj[i]:
                if j not in seen:
                    seen.add(j)
                    queue.append(j)
        order.extend(queue)
    return np.asarray(order, dtype=int)


def initialize_labels(smap, graph, model: DirectionalModel, rng: np.random.Generator, ids,
                      lam: float = 0.0) -> int:
    """Label unlabelled surfels by sequential CRP insertion in spatial order.

    The MRF weight is replaced by ``lam`` during insertion. With the full
    weight a young, broad cluster absorbs every neighbour before its
    concentration can sharpen; later sweeps use the model's own weight.
    """
    ids = np.asarray(ids, dtype=int)
    saved = model.lam
    model.lam = lam
    try:
        return sweep_labels(smap, graph, model, rng, spatial_order(graph, ids, rng), refresh=True)
    finally:
        model.lam = saved
