"""
Gibbs sampler over surfel normals, locations, labels and cluster parameters.

Normals are conditionally independent given locations and labels, so
they are drawn in one vectorised batch. Locations are coupled through
the planarity MRF; they are drawn in batches of mutually non-adjacent
surfels, which keeps every batch an exact Gibbs block.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from dirslam.directional import bingham_to_vmf_batch, sample_vmf, VonMisesFisher
from dirslam.segmentation import DirectionalModel, sample_cluster_params, sweep_labels
from dirslam.surfel_map import SIGMA_PL, MapSnapshot, NeighborGraph, SurfelMap

log = logging.getLogger(__name__)

TAU_OBS = 100.0
COND_LIMIT = 1e12
JITTER = 1e-9
COV_FLOOR = 1e-12
LOG_2PIE = float(np.log(2.0 * np.pi * np.e))


@dataclass
class GibbsConfig:
    tau_obs: float = TAU_OBS
    sigma_pl: float = SIGMA_PL
    burn_in: int = 5
    min_samples: int = 10
    literal_bingham: bool = False


@dataclass
class SweepSchedule:
    """Per-group sweep counters; estimates come only from post-burn-in samples."""

    burn_in: int = 5
    publish_every: int = 1
    counters: dict = field(default_factory=lambda: {"normals": 0, "labels": 0, "params": 0,
                                                    "locations": 0})

    def tick(self, group: str):
        self.counters[group] += 1


@dataclass
class SweepReport:
    sweep: int
    wall_time: float
    n_clusters: int
    label_change_rate: float
    samples_per_surfel: float
    n_surfels: int
    degenerate_normals: int = 0
    jittered_locations: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


# -- normals -----------------------------------------------------------------------


def _same_label_neighbors(smap: SurfelMap, graph: NeighborGraph, ids: np.ndarray):
    nb = graph.nbr[ids]
    valid = nb >= 0
    nbc = np.where(valid, nb, 0)
    same = valid & (smap.label[nbc] == smap.label[ids][:, None]) & (smap.label[ids][:, None] >= 0)
    return nbc, same


def normal_posterior(smap: SurfelMap, graph: NeighborGraph, model: DirectionalModel, ids,
                     cfg: GibbsConfig = GibbsConfig()) -> np.ndarray:
    """Natural parameter theta of the vMF normal conditional for each id.

    theta = tau_O sum_j R_t x_j^n + tau_z mu_z + kappa_B q1, where
    (q1, kappa_B) approximate the same-segment planarity Bingham.
    """
    ids = np.asarray(ids, dtype=int)
    theta = cfg.tau_obs * smap.obs_normal[ids]
    lab = smap.label[ids]
    for key, c in model.clusters.items():
        m = lab == key
        if m.any():
            theta[m] += c.tau * c.mu
    nbc, same = _same_label_neighbors(smap, graph, ids)
    d = (smap.position[ids][:, None, :] - smap.position[nbc]) * same[..., None]
    S = np.einsum("nki,nkj->nij", d, d) / cfg.sigma_pl ** 2
    q1, kappa = bingham_to_vmf_batch(S, literal=cfg.literal_bingham)
    # the Bingham is antipodal; take the hemisphere the other evidence favours
    ref = theta.copy()
    weak = np.linalg.norm(ref, axis=1) < 1e-12
    ref[weak] = smap.normal[ids][weak]
    flip = np.sum(q1 * ref, axis=1) < 0
    q1 = np.where(flip[:, None], -q1, q1)
    return theta + kappa[:, None] * q1


def sample_normals(smap: SurfelMap, graph: NeighborGraph, model: DirectionalModel,
                   rng: np.random.Generator, ids, cfg: GibbsConfig = GibbsConfig()) -> int:
    """Draw all normals of ``ids`` in place; returns the number of degenerate draws."""
    ids = np.asarray(ids, dtype=int)
    if len(ids) == 0:
        return 0
    theta = normal_posterior(smap, graph, model, ids, cfg)
    kappa = np.linalg.norm(theta, axis=1)
    degenerate = kappa < 1e-12
    mode = np.where(degenerate[:, None], smap.normal[ids], theta / np.maximum(kappa, 1e-300)[:, None])
    smap.normal[ids] = sample_vmf(mode, np.where(degenerate, 0.0, kappa), rng)
    return int(degenerate.sum())


def sample_normal(smap: SurfelMap, graph: NeighborGraph, model: DirectionalModel, i: int,
                  rng: np.random.Generator, cfg: GibbsConfig = GibbsConfig()) -> np.ndarray:
    """Draw the normal of surfel ``i`` from its conditional (in place)."""
    sample_normals(smap, graph, model, rng, [i], cfg)
    return smap.normal[i].copy()


def normal_conditional(smap, graph, model, i: int, cfg: GibbsConfig = GibbsConfig()) -> VonMisesFisher:
    theta = normal_posterior(smap, graph, model, [i], cfg)[0]
    k = float(np.linalg.norm(theta))
    return VonMisesFisher(theta / k if k > 0 else smap.normal[i], k)


# -- locations ---------------------------------------------------------------------


def location_posterior(smap: SurfelMap, graph: NeighborGraph, ids,
                       cfg: GibbsConfig = GibbsConfig()):
    """Gaussian conditional of surfel locations in information form.

    Returns (mean (m,3), cov (m,3,3), jittered (m,)). The information
    matrix is the sum of observation informations plus (n_i n_i^T +
    n_j n_j^T) / sigma_pl^2 for every same-segment neighbour j.
    """
    ids = np.asarray(ids, dtype=int)
    info = smap.obs_info[ids].copy()
    eta = smap.obs_info_point[ids].copy()
    nbc, same = _same_label_neighbors(smap, graph, ids)
    n_i = smap.normal[ids]
    n_j = smap.normal[nbc] * same[..., None]
    s2 = cfg.sigma_pl ** 2
    cnt = same.sum(axis=1).astype(float)
    I_sum = (cnt[:, None, None] * n_i[:, :, None] * n_i[:, None, :]
             + np.einsum("nki,nkj->nij", n_j, n_j)) / s2
    info += I_sum
    p_j = smap.position[nbc] * same[..., None]
    # I_ij p_j = (n_i (n_i . p_j) + n_j (n_j . p_j)) / s2
    eta += (n_i * np.sum(n_i[:, None, :] * p_j, axis=2).sum(axis=1)[:, None]
            + np.einsum("nki,nk->ni", n_j, np.sum(n_j * p_j, axis=2))) / s2
    info = 0.5 * (info + np.swapaxes(info, 1, 2))
    cond = np.linalg.cond(info)
    jittered = ~(cond < COND_LIMIT)
    if jittered.any():
        info[jittered] += JITTER * np.eye(3)
    cov = np.linalg.inv(info)
    mean = np.einsum("nij,nj->ni", cov, eta)
    return mean, 0.5 * (cov + np.swapaxes(cov, 1, 2)), jittered


def independent_batches(smap: SurfelMap, graph: NeighborGraph, ids, rng: np.random.Generator):
    """Split ``ids`` into batches with no graph edge (either direction) inside a batch."""
    ids = np.asarray(ids, dtype=int)
    n = len(ids)
    if n == 0:
        return []
    local = np.full(smap.size, -1, dtype=np.int64)
    local[ids] = np.arange(n)
    nb = graph.nbr[ids]
    src = np.repeat(np.arange(n), nb.shape[1])
    dst = local[np.where(nb >= 0, nb, 0).reshape(-1)]
    keep = (nb.reshape(-1) >= 0) & (dst >= 0)
    src, dst = src[keep], dst[keep]
    src, dst = np.concatenate([src, dst]), np.concatenate([dst, src])
    # greedy colouring in random order: each vertex takes the smallest
    # colour unused by its already-coloured neighbours
    order = np.argsort(src, kind="stable")
    src, dst = src[order], dst[order]
    ptr = np.searchsorted(src, np.arange(n + 1)).tolist()
    adj = dst.tolist()
    color = [-1] * n
    for i in rng.permutation(n).tolist():
        used = {color[j] for j in adj[ptr[i]:ptr[i + 1]]}
        c = 0
        while c in used:
            c += 1
        color[i] = c
    color = np.asarray(color)
    return [ids[color == c] for c in range(int(color.max()) + 1)]


def sample_locations(smap: SurfelMap, graph: NeighborGraph, rng: np.random.Generator, ids,
                     cfg: GibbsConfig = GibbsConfig()) -> int:
    """Draw all locations of ``ids`` in place; returns the number of jittered solves."""
    jit = 0
    for batch in independent_batches(smap, graph, ids, rng):
        mean, cov, jittered = location_posterior(smap, graph, batch, cfg)
        L = np.linalg.cholesky(cov)
        smap.position[batch] = mean + np.einsum("nij,nj->ni", L, rng.standard_normal((len(batch), 3)))
        jit += int(jittered.sum())
    return jit


def sample_location(smap: SurfelMap, graph: NeighborGraph, i: int, rng: np.random.Generator,
                    cfg: GibbsConfig = GibbsConfig()) -> np.ndarray:
    sample_locations(smap, graph, rng, [i], cfg)
    return smap.position[i].copy()


# -- sweeps and estimates ----------------------------------------------------------


def run_sweep(smap: SurfelMap, graph: NeighborGraph, model: DirectionalModel,
              rng: np.random.Generator, cfg: GibbsConfig = GibbsConfig(), sweep_index: int = 0,
              sample_normals_step: bool = True, sample_labels_step: bool = True,
              sample_locations_step: bool = True) -> SweepReport:
    """One full Gibbs pass: normals, labels, cluster parameters, locations.

    The step flags freeze groups of variables (used by tests).
    """
    t0 = time.perf_counter()
    ids = smap.alive_ids()
    if len(ids) == 0:
        return SweepReport(sweep_index, 0.0, len(model), 0.0, 0.0, 0)
    degenerate = jittered = changes = 0
    if sample_normals_step:
        degenerate = sample_normals(smap, graph, model, rng, ids, cfg)
    if sample_labels_step:
        changes = sweep_labels(smap, graph, model, rng, rng.permutation(ids))
        sample_cluster_params(smap, model, rng)
    if sample_locations_step:
        jittered = sample_locations(smap, graph, rng, ids, cfg)
    smap.record_samples(ids, cfg.burn_in)
    return SweepReport(sweep_index, time.perf_counter() - t0, len(model), changes / len(ids),
                       float(smap.n_samples[ids].mean()), len(ids), degenerate, jittered)


def gaussian_entropy(cov: np.ndarray) -> np.ndarray:
    """0.5 log((2 pi e)^3 |cov|) with eigenvalues clamped at COV_FLOOR."""
    ev = np.maximum(np.linalg.eigvalsh(cov), COV_FLOOR)
    return 0.5 * (3.0 * LOG_2PIE + np.sum(np.log(ev), axis=-1))


def clamp_cov(cov: np.ndarray) -> np.ndarray:
    ev, V = np.linalg.eigh(cov)
    ev = np.maximum(ev, COV_FLOOR)
    return np.einsum("...ij,...j,...kj->...ik", V, ev, V)


def publish_estimates(smap: SurfelMap, cfg: GibbsConfig = GibbsConfig()) -> MapSnapshot:
    """Write sample-based estimates into a new immutable snapshot.

    Surfels with fewer than ``min_samples`` post-burn-in samples publish
    their first observation (position, covariance, normal) instead.
    """
    with smap.lock:
        ids = smap.alive_ids()
        smap.version += 1
        if len(ids) == 0:
            return replace(MapSnapshot.empty(), version=smap.version)
        have = smap.n_samples[ids] >= cfg.min_samples
        mean, cov = smap.sample_mean_cov(ids)
        pos = np.where(have[:, None], mean, smap.init_position[ids])
        cov = np.where(have[:, None, None], clamp_cov(cov), smap.init_cov[ids])
        sn = smap.sample_normal[ids]
        sn_norm = np.linalg.norm(sn, axis=1)
        use_sn = have & (sn_norm > 1e-12)
        normal = np.where(use_sn[:, None], sn / np.maximum(sn_norm, 1e-300)[:, None],
                          smap.init_normal[ids])
        label = np.where(have, smap.most_likely_label(ids), smap.label[ids])
        return MapSnapshot(
            version=smap.version, ids=ids.copy(), position=pos, normal=normal, cov=cov,
            label=label.astype(np.int64), intensity=smap.intensity(ids),
            radius=smap.radius[ids].copy(), gradient=smap.gradient[ids].copy(),
            entropy=gaussian_entropy(cov), n_samples=smap.n_samples[ids].copy())


class SweepLog:
    """Append-only JSON-lines log of sweep reports."""

    def __init__(self, path=None):
        self.path = path
        self.reports: list[SweepReport] = []

    def append(self, report: SweepReport):
        self.reports.append(report)
        if self.path is not None:
            with open(self.path, "a") as fh:
                fh.write(report.to_json() + "\n")


class SamplerWorkers:
    """Three background sampler groups sharing the map.

    Groups: (normals + cluster parameters), labels, locations. Each loops
    at its own pace and holds ``smap.lock`` for one pass at a time; the
    label pass reconciles cluster counts at its end.
    """

    def __init__(self, smap: SurfelMap, graph: NeighborGraph, model: DirectionalModel,
                 cfg: GibbsConfig, seed: int = 0, sweep_log: SweepLog | None = None):
        self.smap, self.graph, self.model, self.cfg = smap, graph, model, cfg
        self.sweep_log = sweep_log
        seqs = np.random.SeedSequence(seed).spawn(3)
        self.rngs = [np.random.default_rng(s) for s in seqs]
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self.passes = {"normals": 0, "labels": 0, "locations": 0}

    def _loop(self, name, fn):
        while not self._stop.is_set():
            with self.smap.lock:
                ids = self.smap.alive_ids()
                if len(ids):
                    fn(ids)
                    self.passes[name] += 1
            if not len(ids):
                time.sleep(0.005)
            else:
                time.sleep(0)

    def _normals(self, ids):
        sample_normals(self.smap, self.graph, self.model, self.rngs[0], ids, self.cfg)
        sample_cluster_params(self.smap, self.model, self.rngs[0])

    def _labels(self, ids):
        t0 = time.perf_counter()
        changes = sweep_labels(self.smap, self.graph, self.model, self.rngs[1],
                               self.rngs[1].permutation(ids))
        if self.sweep_log is not None:
            self.sweep_log.append(SweepReport(
                self.passes["labels"], time.perf_counter() - t0, len(self.model),
                changes / len(ids), float(self.smap.n_samples[ids].mean()), len(ids)))

    def _locations(self, ids):
        sample_locations(self.smap, self.graph, self.rngs[2], ids, self.cfg)
        self.smap.record_samples(ids, self.cfg.burn_in)

    def start(self):
        for name, fn in (("normals", self._normals), ("labels", self._labels),
                         ("locations", self._locations)):
            t = threading.Thread(target=self._loop, args=(name, fn), name=f"sampler-{name}",
                                 daemon=True)
            t.start()
            self._threads.append(t)

    def stop(self):
        """Signal workers and wait for in-flight passes to drain."""
        self._stop.set()
        for t in self._threads:
            t.join()
        self._threads.clear()
