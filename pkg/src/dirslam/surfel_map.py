"""
Surfel map store, per-surfel sampler statistics and the k-NN MRF graph.

The map is a struct-of-arrays: row ``i`` of every array belongs to surfel
``i`` and ids are never reused. Observation sums are kept instead of raw
observations, so the camera pose of an observation is baked in when it is
added.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from dirslam.directional import normalize
from dirslam.frontend.camera import Frame
from dirslam.frontend.noise import depth_noise_cov
from dirslam.lie import Pose, point_jacobian

SIGMA_PL = 0.01
KNN_K = 12
KNN_RADIUS = 0.2
TOP_K = 3
# pose covariance used before the tracker has produced one
DEFAULT_POSE_COV = 1e-6
OCCLUSION_MAHALANOBIS = 3.0
NO_LABEL = -1


@dataclass
class Surfel:
    """Read-only view of one surfel."""

    id: int
    position: np.ndarray
    normal: np.ndarray
    intensity: float
    radius: float
    label: int
    n_obs: int
    n_samples: int
    rgb: np.ndarray | None = None


def mrf_potential(a: Surfel, b: Surfel, sigma_pl: float = SIGMA_PL) -> float:
    """Planarity potential between two surfels, in (0, 1]."""
    return float(np.exp(-neg_log_potential(a.position, a.normal, a.label,
                                           b.position, b.normal, b.label, sigma_pl)))


def neg_log_potential(p_a, n_a, z_a, p_b, n_b, z_b, sigma_pl: float = SIGMA_PL):
    """-log of the planarity potential; broadcasts over leading dims."""
    d = np.asarray(p_b, dtype=float) - np.asarray(p_a, dtype=float)
    oa = np.sum(np.asarray(n_a) * d, axis=-1)
    ob = np.sum(np.asarray(n_b) * d, axis=-1)
    same = np.asarray(z_a) == np.asarray(z_b)
    out = np.where(same, (oa * oa + ob * ob) / (2.0 * sigma_pl ** 2), 0.0)
    return out if np.ndim(out) else float(out)


_FIELDS = {
    # current Gibbs state
    "alive": (bool, ()),
    "position": (float, (3,)),
    "normal": (float, (3,)),
    "label": (np.int64, ()),
    "radius": (float, ()),
    # observation sums
    "obs_info": (float, (3, 3)),
    "obs_info_point": (float, (3,)),
    "obs_normal": (float, (3,)),
    "n_obs": (np.int64, ()),
    "intensity_sum": (float, ()),
    "rgb_sum": (float, (3,)),
    # first observation, published until enough samples exist
    "init_position": (float, (3,)),
    "init_cov": (float, (3, 3)),
    "init_normal": (float, (3,)),
    # post-burn-in sample statistics
    "sample_pos": (float, (3,)),
    "sample_outer": (float, (3, 3)),
    "sample_normal": (float, (3,)),
    "n_samples": (np.int64, ()),
    "sweeps": (np.int64, ()),
    "topk_label": (np.int64, (TOP_K,)),
    "topk_count": (np.int64, (TOP_K,)),
    # tracking and bookkeeping
    "gradient": (float, ()),
    "last_pixel": (float, (2,)),
    "created_frame": (np.int64, ()),
    "gt_segment": (np.int64, ()),
    "violations": (np.int64, ()),
}


class SurfelMap:
    """Growable surfel store. Thread-safety is the caller's job via ``lock``."""

    def __init__(self, capacity: int = 1024, retain_samples: bool = False):
        self.size = 0
        self._cap = 0
        self.lock = threading.RLock()
        self.retain_samples = retain_samples
        self.retained: dict[int, list] = {}
        self.version = 0
        self._grow(max(capacity, 16))

    def _grow(self, cap: int):
        for name, (dt, shape) in _FIELDS.items():
            new = np.zeros((cap,) + shape, dtype=dt)
            if self._cap:
                new[:self._cap] = getattr(self, name)
            setattr(self, name, new)
        self.label[self._cap:] = NO_LABEL
        self.topk_label[self._cap:] = NO_LABEL
        self.gt_segment[self._cap:] = -1
        self._cap = cap

    def __len__(self) -> int:
        return int(self.alive[:self.size].sum())

    def alive_ids(self) -> np.ndarray:
        return np.flatnonzero(self.alive[:self.size])

    def surfel(self, i: int) -> Surfel:
        n = max(int(self.n_obs[i]), 1)
        return Surfel(int(i), self.position[i].copy(), self.normal[i].copy(),
                      float(self.intensity_sum[i] / n), float(self.radius[i]),
                      int(self.label[i]), int(self.n_obs[i]), int(self.n_samples[i]),
                      self.rgb_sum[i] / n)

    def intensity(self, ids=None) -> np.ndarray:
        ids = self.alive_ids() if ids is None else ids
        return self.intensity_sum[ids] / np.maximum(self.n_obs[ids], 1)

    # -- insertion / observation -------------------------------------------------

    def add(self, position, normal, radius, obs_cov_cam, x_cam, n_cam, pose: Pose,
            intensity, rgb=None, gradient=None, pixel=None, frame_index: int = 0,
            gt_segment=None) -> np.ndarray:
        """Insert surfels from their first observation; returns the new ids.

        ``position``/``normal`` are world-frame, ``x_cam``/``n_cam`` the
        camera-frame observation and ``obs_cov_cam`` its covariance
        (already including pose uncertainty).
        """
        position = np.atleast_2d(np.asarray(position, dtype=float))
        m = len(position)
        if self.size + m > self._cap:
            self._grow(max(2 * self._cap, self.size + m))
        ids = np.arange(self.size, self.size + m)
        self.size += m
        self.alive[ids] = True
        self.position[ids] = position
        self.normal[ids] = normalize(np.atleast_2d(normal))
        self.radius[ids] = radius
        self.label[ids] = NO_LABEL
        self.init_position[ids] = position
        self.init_normal[ids] = self.normal[ids]
        R = pose.R
        self.init_cov[ids] = R @ np.asarray(obs_cov_cam).reshape(m, 3, 3) @ R.T
        self.created_frame[ids] = frame_index
        if gt_segment is not None:
            self.gt_segment[ids] = gt_segment
        self.add_observations(ids, x_cam, n_cam, obs_cov_cam, pose, intensity, rgb,
                              gradient, pixel)
        return ids

    def add_observations(self, ids, x_cam, n_cam, obs_cov_cam, pose: Pose, intensity,
                         rgb=None, gradient=None, pixel=None):
        """Fold one frame's observations of ``ids`` into the running sums."""
        ids = np.asarray(ids, dtype=int).reshape(-1)
        m = len(ids)
        if m == 0:
            return
        R = pose.R
        cov = np.asarray(obs_cov_cam, dtype=float).reshape(m, 3, 3)
        info_cam = np.linalg.inv(cov)
        info_world = R @ info_cam @ R.T
        xw = pose.apply(np.asarray(x_cam, dtype=float).reshape(m, 3))
        np.add.at(self.obs_info, ids, info_world)
        np.add.at(self.obs_info_point, ids, np.einsum("nij,nj->ni", info_world, xw))
        np.add.at(self.obs_normal, ids, np.asarray(n_cam, dtype=float).reshape(m, 3) @ R.T)
        np.add.at(self.n_obs, ids, 1)
        np.add.at(self.intensity_sum, ids, np.broadcast_to(intensity, (m,)))
        if rgb is not None:
            np.add.at(self.rgb_sum, ids, np.broadcast_to(rgb, (m, 3)))
        else:
            np.add.at(self.rgb_sum, ids, np.broadcast_to(intensity, (m,))[:, None]
                      * np.ones((1, 3)))
        if gradient is not None:
            self.gradient[ids] = gradient
        if pixel is not None:
            self.last_pixel[ids] = pixel

    def remove(self, ids):
        ids = np.asarray(ids, dtype=int)
        self.alive[ids] = False

    # -- sample statistics ---------------------------------------------------------

    def record_samples(self, ids, burn_in: int):
        """Age ``ids`` by one sweep and accumulate their current state past burn-in."""
        ids = np.asarray(ids, dtype=int)
        self.sweeps[ids] += 1
        keep = ids[self.sweeps[ids] > burn_in]
        if len(keep) == 0:
            return
        p = self.position[keep]
        self.sample_pos[keep] += p
        self.sample_outer[keep] += p[:, :, None] * p[:, None, :]
        self.sample_normal[keep] += self.normal[keep]
        self.n_samples[keep] += 1
        topk_update(self.topk_label, self.topk_count, keep, self.label[keep])
        if self.retain_samples:
            for i in keep:
                self.retained.setdefault(int(i), []).append(
                    (self.position[i].copy(), self.normal[i].copy(), int(self.label[i])))

    def sample_mean_cov(self, ids) -> tuple[np.ndarray, np.ndarray]:
        ids = np.asarray(ids, dtype=int)
        n = np.maximum(self.n_samples[ids], 1)[:, None]
        mean = self.sample_pos[ids] / n
        cov = self.sample_outer[ids] / n[..., None] - mean[:, :, None] * mean[:, None, :]
        return mean, 0.5 * (cov + np.swapaxes(cov, 1, 2))

    def most_likely_label(self, ids) -> np.ndarray:
        ids = np.asarray(ids, dtype=int)
        best = np.argmax(self.topk_count[ids], axis=1)
        lab = self.topk_label[ids, best]
        return np.where(self.topk_count[ids, best] > 0, lab, self.label[ids])


def topk_update(labels: np.ndarray, counts: np.ndarray, ids, values):
    """Misra-Gries update of the per-surfel top-K label counters.

    A tracked value is incremented; otherwise it takes a slot whose count
    is zero, or, with every slot occupied, all counts drop by one. Any
    label seen in more than a 1/(K+1) share of a stream keeps a slot.
    """
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    values = np.asarray(values, dtype=np.int64).reshape(-1)
    if len(np.unique(ids)) == len(ids):
        c = counts[ids]
        hit = (labels[ids] == values[:, None]) & (c > 0)
        has = hit.any(axis=1)
        counts[ids[has], np.argmax(hit[has], axis=1)] += 1
        free = (c == 0) & ~has[:, None]
        take = free.any(axis=1)
        j = np.argmax(free[take], axis=1)
        labels[ids[take], j] = values[take]
        counts[ids[take], j] = 1
        full = ids[~has & ~take]
        counts[full] -= 1
        return
    # repeated ids must be applied in order
    for i, z in zip(ids.tolist(), values.tolist()):
        row, cnt = labels[i], counts[i]
        hit = np.flatnonzero((row == z) & (cnt > 0))
        if len(hit):
            cnt[hit[0]] += 1
            continue
        free = np.flatnonzero(cnt == 0)
        if len(free):
            row[free[0]] = z
            cnt[free[0]] = 1
        else:
            cnt -= 1


class TopKCounter:
    """Standalone Misra-Gries counter with ``k`` slots."""

    def __init__(self, k: int = TOP_K):
        self.labels = np.full((1, k), NO_LABEL, dtype=np.int64)
        self.counts = np.zeros((1, k), dtype=np.int64)

    def update(self, value: int):
        topk_update(self.labels, self.counts, [0], [value])

    def most_likely(self) -> int:
        j = int(np.argmax(self.counts[0]))
        return int(self.labels[0, j]) if self.counts[0, j] > 0 else NO_LABEL


# -- neighbour graph -------------------------------------------------------------


class NeighborGraph:
    """Directed k-NN graph over surfels; rows padded with -1."""

    def __init__(self, k: int = KNN_K, radius: float = KNN_RADIUS, sigma_pl: float = SIGMA_PL,
                 capacity: int = 1024):
        self.k = k
        self.radius = radius
        self.sigma_pl = sigma_pl
        self.nbr = np.full((capacity, k), -1, dtype=np.int64)
        self.dist = np.full((capacity, k), np.inf)

    def ensure(self, n: int):
        if n > len(self.nbr):
            cap = max(n, 2 * len(self.nbr))
            nbr = np.full((cap, self.k), -1, dtype=np.int64)
            dist = np.full((cap, self.k), np.inf)
            nbr[:len(self.nbr)] = self.nbr
            dist[:len(self.dist)] = self.dist
            self.nbr, self.dist = nbr, dist

    def neighbors(self, i: int) -> np.ndarray:
        row = self.nbr[i]
        return row[row >= 0]

    def purge(self, alive: np.ndarray):
        """Drop edges to dead surfels, keeping rows left-packed."""
        n = min(len(alive), len(self.nbr))
        rows = self.nbr[:n]
        dead = (rows >= 0) & ~alive[np.maximum(rows, 0)]
        if not dead.any():
            return
        bad = np.flatnonzero(dead.any(axis=1))
        for i in bad:
            keep = (self.nbr[i] >= 0) & ~dead[i]
            m = int(keep.sum())
            nb, ds = self.nbr[i][keep].copy(), self.dist[i][keep].copy()
            self.nbr[i] = -1
            self.dist[i] = np.inf
            self.nbr[i, :m] = nb
            self.dist[i, :m] = ds
        self.nbr[:n][~alive[:n]] = -1
        self.dist[:n][~alive[:n]] = np.inf

    def edges(self, ids=None):
        """Flat (src, dst) arrays of current edges."""
        rows = self.nbr if ids is None else self.nbr[ids]
        src = np.repeat(np.arange(len(rows)) if ids is None else np.asarray(ids), self.k)
        dst = rows.reshape(-1)
        m = dst >= 0
        return src[m], dst[m]


def knn_update(smap: SurfelMap, graph: NeighborGraph, ids, tree: cKDTree | None = None,
               tree_ids: np.ndarray | None = None):
    """Recompute neighbourhoods of ``ids`` from current positions/normals/labels.

    Candidates are alive surfels within the Euclidean radius; the k
    smallest -log potentials win, ties broken by Euclidean distance.
    """
    ids = np.atleast_1d(np.asarray(ids, dtype=int))
    graph.ensure(smap.size)
    if tree is None:
        tree_ids = smap.alive_ids()
        tree = cKDTree(smap.position[tree_ids]) if len(tree_ids) else None
    if tree is None or len(ids) == 0:
        graph.nbr[ids] = -1
        graph.dist[ids] = np.inf
        return
    cand_lists = tree.query_ball_point(smap.position[ids], r=graph.radius)
    k = graph.k
    graph.nbr[ids] = -1
    graph.dist[ids] = np.inf
    lens = np.fromiter(map(len, cand_lists), dtype=np.int64, count=len(ids))
    total = int(lens.sum())
    if total == 0:
        return
    grp = np.repeat(np.arange(len(ids)), lens)
    dst = tree_ids[np.fromiter(itertools.chain.from_iterable(cand_lists), dtype=np.int64,
                               count=total)]
    src = ids[grp]
    ok = (dst != src) & smap.alive[dst]
    grp, src, dst = grp[ok], src[ok], dst[ok]
    if len(src) == 0:
        return
    # different-label pairs have potential 0; only same-label pairs need work
    pot = np.zeros(len(src))
    same = np.flatnonzero(smap.label[src] == smap.label[dst])
    s_, d_ = src[same], dst[same]
    pot[same] = neg_log_potential(smap.position[s_], smap.normal[s_], 0,
                                  smap.position[d_], smap.normal[d_], 0, graph.sigma_pl)
    # cheap pass: one float key orders (row, potential) up to rounding, which
    # gives a per-row cutoff; only candidates under it go to the exact sort
    span = float(pot.max()) + 1.0
    key = grp * span + pot
    slack = 4.0 * np.finfo(float).eps * float(key.max()) + 1e-300
    order = np.argsort(key, kind="stable")
    g_sorted = grp[order]
    start = np.searchsorted(g_sorted, np.arange(len(ids)))
    size = np.diff(np.r_[start, len(g_sorted)])
    cut = np.full(len(ids), np.inf)
    full = size > k
    cut[full] = pot[order[start[full] + k - 1]] + 2.0 * slack
    keep = pot <= cut[grp]
    grp, src, dst, pot = grp[keep], src[keep], dst[keep], pot[keep]
    euc = np.linalg.norm(smap.position[dst] - smap.position[src], axis=1)
    order = np.lexsort((dst, euc, pot, grp))
    grp, dst, pot = grp[order], dst[order], pot[order]
    first = np.searchsorted(grp, np.arange(len(ids)))
    rank = np.arange(len(grp)) - first[grp]
    keep = rank < k
    rows = ids[grp[keep]]
    graph.nbr[rows, rank[keep]] = dst[keep]
    graph.dist[rows, rank[keep]] = pot[keep]


def knn_brute_force(smap: SurfelMap, i: int, k: int = KNN_K, radius: float = KNN_RADIUS,
                    sigma_pl: float = SIGMA_PL) -> list[int]:
    """O(n) reference neighbourhood of surfel ``i`` for testing."""
    scored = []
    for j in smap.alive_ids().tolist():
        if j == i:
            continue
        euc = float(np.linalg.norm(smap.position[j] - smap.position[i]))
        if euc > radius:
            continue
        pot = neg_log_potential(smap.position[i], smap.normal[i], smap.label[i],
                                smap.position[j], smap.normal[j], smap.label[j], sigma_pl)
        scored.append((pot, euc, j))
    scored.sort()
    return [j for _, _, j in scored[:k]]


# -- frame-driven insertion and pruning ------------------------------------------


def surfel_radius(z, focal: float):
    """Pixel footprint sqrt(2) z / f, fixed at creation."""
    return np.sqrt(2.0) * np.asarray(z, dtype=float) / focal


def observation_cov(x_cam: np.ndarray, pixel: np.ndarray, frame: Frame,
                    pose_cov: np.ndarray | None) -> np.ndarray:
    """Sigma_p = Sigma_O + J Sigma_T J^T in the camera frame.

    J = d x_cam / d omega = [[x]_x, -I] for a right-perturbed pose.
    """
    x_cam = np.atleast_2d(x_cam)
    cov = depth_noise_cov(x_cam[:, 2], np.atleast_2d(pixel), frame.intrinsics)
    S = np.eye(6) * DEFAULT_POSE_COV if pose_cov is None else pose_cov
    J = -point_jacobian(x_cam, np.eye(3))
    return cov + J @ S @ np.swapaxes(J, -1, -2)


def add_surfels(smap: SurfelMap, frame: Frame, pixels: np.ndarray, pose: Pose,
                normals_cam: np.ndarray, frame_index: int = 0) -> np.ndarray:
    """Create surfels at integer ``pixels`` (N, 2) with valid depth.

    Pixels with invalid depth are skipped. Returns the new ids.
    """
    pixels = np.atleast_2d(np.asarray(pixels, dtype=int))
    u, v = pixels[:, 0], pixels[:, 1]
    z = frame.depth[v, u]
    ok = z > 0
    if not ok.any():
        return np.zeros(0, dtype=int)
    u, v, z = u[ok], v[ok], z[ok]
    normals_cam = np.atleast_2d(normals_cam)[ok]
    x_cam = frame.intrinsics.backproject(u, v, z)
    pix = np.stack([u, v], axis=1).astype(float)
    cov = observation_cov(x_cam, pix, frame, pose.cov)
    f = 0.5 * (frame.intrinsics.fx + frame.intrinsics.fy)
    rgb = frame.rgb[v, u] if frame.rgb is not None else None
    gt = frame.surface_id[v, u] if frame.surface_id is not None else None
    grad = frame.gradient_magnitude[v, u]
    return smap.add(pose.apply(x_cam), normals_cam @ pose.R.T, surfel_radius(z, f), cov,
                    x_cam, normals_cam, pose, frame.intensity[v, u], rgb=rgb, gradient=grad,
                    pixel=pix, frame_index=frame_index, gt_segment=gt)


def visibility(positions: np.ndarray, normals: np.ndarray, covs: np.ndarray | None,
               frame: Frame, pose: Pose, gate: float = OCCLUSION_MAHALANOBIS):
    """Classify map points against a frame.

    Returns a dict of boolean masks: ``in_view`` (projects inside the
    image with valid depth), ``behind`` (z <= 0), ``back_facing``,
    ``occluded`` (observed depth in front by more than ``gate`` sigma),
    ``free_space`` (observed depth behind by more than ``gate`` sigma),
    plus ``uv``, ``x_cam`` and ``z_obs`` arrays.
    """
    K = frame.intrinsics
    x_cam = pose.apply_inverse(positions)
    n_cam = normals @ pose.R
    z = x_cam[:, 2]
    behind = z <= 1e-6
    uv = K.project(np.where(behind[:, None], np.array([0.0, 0.0, 1.0]), x_cam))
    inside = ~behind & K.in_image(uv)
    ui = np.clip(np.rint(uv[:, 0]).astype(int), 0, K.width - 1)
    vi = np.clip(np.rint(uv[:, 1]).astype(int), 0, K.height - 1)
    z_obs = np.where(inside, frame.depth[vi, ui], 0.0)
    back = inside & (np.sum(n_cam * x_cam, axis=1) >= 0)
    has = inside & (z_obs > 0)
    var_z = depth_noise_cov(np.maximum(z_obs, 1e-3), uv, K)[:, 2, 2]
    if covs is not None:
        # surfel depth uncertainty along the optical axis
        # z-z entry of R^T C R
        rz = pose.R[:, 2]
        var_z = var_z + np.einsum("i,nij,j->n", rz, covs, rz, optimize=True)
    sd = np.sqrt(np.maximum(var_z, 1e-12))
    occluded = has & ~back & ((z - z_obs) > gate * sd)
    free_space = has & ~back & ((z_obs - z) > gate * sd)
    return {"in_view": has, "behind": behind, "back_facing": back, "occluded": occluded,
            "free_space": free_space, "uv": uv, "x_cam": x_cam, "z_obs": z_obs,
            "pixel": np.stack([ui, vi], axis=1)}


def prune_surfels(smap: SurfelMap, frame: Frame, pose: Pose,
                  gate: float = OCCLUSION_MAHALANOBIS, ids=None) -> np.ndarray:
    """Ids excluded from this frame's observations.

    Behind-camera, back-facing and occluded surfels are pruned from the
    frame's association set. The map itself is not modified.
    """
    ids = smap.alive_ids() if ids is None else np.asarray(ids, dtype=int)
    if len(ids) == 0:
        return ids
    vis = visibility(smap.position[ids], smap.normal[ids], smap.init_cov[ids], frame, pose, gate)
    drop = vis["behind"] | vis["back_facing"] | vis["occluded"]
    return ids[drop]


# -- export ----------------------------------------------------------------------


def write_ply(path, positions, normals, rgb, labels, radius):
    """Binary little-endian PLY with per-vertex label and radius."""
    from plyfile import PlyData, PlyElement

    n = len(positions)
    dt = [("x", "f4"), ("y", "f4"), ("z", "f4"), ("nx", "f4"), ("ny", "f4"), ("nz", "f4"),
          ("red", "u1"), ("green", "u1"), ("blue", "u1"), ("label", "u4"), ("radius", "f4")]
    v = np.empty(n, dtype=dt)
    positions = np.asarray(positions).reshape(n, 3)
    normals = np.asarray(normals).reshape(n, 3)
    for j, c in enumerate("xyz"):
        v[c] = positions[:, j]
        v["n" + c] = normals[:, j]
    col = np.clip(np.rint(np.asarray(rgb).reshape(n, 3) * 255.0), 0, 255).astype(np.uint8)
    v["red"], v["green"], v["blue"] = col[:, 0], col[:, 1], col[:, 2]
    v["label"] = np.asarray(labels).astype(np.uint32)
    v["radius"] = radius
    PlyData([PlyElement.describe(v, "vertex")], text=False, byte_order="<").write(str(path))


def read_ply(path) -> dict:
    """Vertex properties of a PLY file as a dict of arrays."""
    from plyfile import PlyData

    vert = PlyData.read(str(path))["vertex"].data
    return {name: np.asarray(vert[name]) for name in vert.dtype.names}


@dataclass(frozen=True)
class MapSnapshot:
    """Immutable published estimates handed to the tracker.

    Arrays are read-only copies; row j belongs to surfel ``ids[j]``.
    """

    version: int
    ids: np.ndarray
    position: np.ndarray
    normal: np.ndarray
    cov: np.ndarray
    label: np.ndarray
    intensity: np.ndarray
    radius: np.ndarray
    gradient: np.ndarray
    entropy: np.ndarray
    n_samples: np.ndarray

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            val = getattr(self, name)
            if isinstance(val, np.ndarray):
                val.setflags(write=False)

    def __len__(self) -> int:
        return len(self.ids)

    @classmethod
    def empty(cls) -> "MapSnapshot":
        z = np.zeros
        return cls(0, z(0, dtype=int), z((0, 3)), z((0, 3)), z((0, 3, 3)), z(0, dtype=int),
                   z(0), z(0), z(0), z(0), z(0, dtype=int))

    def rows(self, ids) -> np.ndarray:
        """Row indices of surfel ``ids`` in this snapshot (-1 if absent)."""
        pos = np.searchsorted(self.ids, ids)
        pos = np.clip(pos, 0, max(len(self.ids) - 1, 0))
        ok = len(self.ids) > 0
        return np.where(ok & (self.ids[pos] == ids), pos, -1) if ok else np.full(np.shape(ids), -1)
