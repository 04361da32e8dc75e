"""Synthetic surfel clouds with known segmentation, for tests and experiments."""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from dirslam.directional import orthonormal_tangents, sample_vmf
from dirslam.lie import Pose
from dirslam.surfel_map import KNN_K, KNN_RADIUS, NeighborGraph, SurfelMap

ORTHO_NORMALS = np.eye(3)


def planar_patch_cloud(normals=ORTHO_NORMALS, per_patch: int = 500, tau_true: float = 200.0,
                       extent: float = 1.0, obs_sigma: float = 0.003, seed: int = 0,
                       retain_samples: bool = False):
    """Surfels on square patches, one per normal, each with one observation.

    Patch centres sit at ``extent`` along their own normal so patches do
    not intersect. Observed normals are drawn from vMF(true, tau_true).
    Returns (map, graph, true_segment) with the graph built from same-patch
    neighbours only.
    """
    rng = np.random.default_rng(seed)
    normals = np.asarray(normals, dtype=float)
    smap = SurfelMap(capacity=len(normals) * per_patch, retain_samples=retain_samples)
    pose = Pose.identity()
    seg = []
    for s, n in enumerate(normals):
        u, v = orthonormal_tangents(n)
        ab = rng.uniform(-0.5 * extent, 0.5 * extent, size=(per_patch, 2))
        pos = n * extent + ab[:, :1] * u + ab[:, 1:] * v
        obs = pos + rng.normal(0.0, obs_sigma, size=pos.shape)
        n_obs = sample_vmf(n, tau_true, rng, size=per_patch)
        cov = np.broadcast_to(np.eye(3) * obs_sigma ** 2, (per_patch, 3, 3))
        smap.add(obs, n_obs, 0.005, cov, obs, n_obs, pose, np.full(per_patch, 0.5),
                 gt_segment=np.full(per_patch, s))
        seg.append(np.full(per_patch, s))
    truth = np.concatenate(seg)
    graph = same_segment_graph(smap, truth)
    return smap, graph, truth


def same_segment_graph(smap: SurfelMap, segment: np.ndarray, k: int = KNN_K,
                       radius: float = KNN_RADIUS) -> NeighborGraph:
    """k nearest same-segment neighbours within ``radius`` (Euclidean)."""
    graph = NeighborGraph(k=k, radius=radius, capacity=smap.size)
    ids = smap.alive_ids()
    for s in np.unique(segment):
        members = ids[segment == s]
        tree = cKDTree(smap.position[members])
        d, idx = tree.query(smap.position[members], k=min(k + 1, len(members)),
                            distance_upper_bound=radius)
        for row, i in enumerate(members):
            ok = (idx[row] < len(members)) & (idx[row] != row)
            nb = members[idx[row][ok]][:k]
            graph.nbr[i, :len(nb)] = nb
            graph.dist[i, :len(nb)] = d[row][ok][:k]
    return graph
