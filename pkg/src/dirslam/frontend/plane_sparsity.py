"""How many randomly hypothesised planes explain a point cloud."""

from __future__ import annotations

import numpy as np

from dirslam.directional import normalize

ANGLE_DEG = 30.0


def inlier_mask(points, normals, plane_points, plane_normals, threshold: float,
                angle_deg: float = ANGLE_DEG, chunk: int = 64) -> np.ndarray:
    """Points within ``threshold`` of, and normal-aligned to, any plane.

    Normal agreement is axial: a plane and its flipped copy are the same.
    """
    points = np.asarray(points, dtype=float)
    normals = normalize(np.asarray(normals, dtype=float))
    cos_t = np.cos(np.deg2rad(angle_deg))
    hit = np.zeros(len(points), dtype=bool)
    for s in range(0, len(plane_points), chunk):
        pp = plane_points[s:s + chunk]
        pn = plane_normals[s:s + chunk]
        dist = np.abs(points @ pn.T - np.sum(pn * pp, axis=1))
        agree = np.abs(normals @ pn.T) >= cos_t
        hit |= ((dist < threshold) & agree).any(axis=1)
    return hit


def plane_sparsity_experiment(points, normals, plane_counts, threshold: float = 0.02,
                              trials: int = 20, angle_deg: float = ANGLE_DEG,
                              rng: np.random.Generator | None = None) -> np.ndarray:
    """Mean inlier fraction for each plane count.

    Each trial draws one random order of cloud points and uses its
    prefixes as plane sets, so every trial's curve is non-decreasing.
    """
    counts = np.asarray(plane_counts, dtype=int)
    if len(counts) == 0 or counts.min() < 1:
        raise ValueError("at least one plane per count is required")
    points = np.asarray(points, dtype=float)
    normals = normalize(np.asarray(normals, dtype=float))
    n = len(points)
    rng = rng if rng is not None else np.random.default_rng()
    out = np.zeros(len(counts))
    order = np.argsort(counts)
    for _ in range(trials):
        seeds = rng.choice(n, size=min(int(counts.max()), n), replace=False)
        hit = np.zeros(n, dtype=bool)
        done = 0
        for j in order:
            c = min(counts[j], len(seeds))
            if c > done:
                new = seeds[done:c]
                hit |= inlier_mask(points, normals, points[new], normals[new], threshold,
                                   angle_deg)
                done = c
            out[j] += hit.mean()
    return out / trials


def surface_cloud(surfaces, density: float = 400.0, noise: float = 0.0,
                  rng: np.random.Generator | None = None):
    """Points and normals sampled uniformly by area over scene rectangles.

    ``density`` is points per square metre. Also returns the surface
    segment of each point.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    pts, nrm, seg = [], [], []
    for s in surfaces:
        m = max(int(round(density * 4.0 * s.half_u * s.half_v)), 1)
        a = rng.uniform(-s.half_u, s.half_u, size=(m, 1))
        b = rng.uniform(-s.half_v, s.half_v, size=(m, 1))
        p = s.origin + a * s.u + b * s.v
        p = p + noise * rng.standard_normal(p.shape)
        pts.append(p)
        nrm.append(np.broadcast_to(s.normal, p.shape))
        seg.append(np.full(m, s.segment))
    return np.concatenate(pts), np.concatenate(nrm), np.concatenate(seg)
