"""Sparse surface-normal estimation from depth windows (scatter-matrix method)."""

from __future__ import annotations

import numpy as np

from dirslam.frontend.camera import Frame
from dirslam.frontend.noise import axial_std

MIN_POINTS = 6
# window used by association and surfel extraction; wider than the
# estimator default because single-pixel depth noise dominates 5x5 windows
PIPELINE_WINDOW = 4
# window points further than this (relative depth) from the centre are
# treated as belonging to another surface
DISCONTINUITY_REL = 0.03


def estimate_normals(frame: Frame, u: np.ndarray, v: np.ndarray, window: int = 2):
    """Camera-frame normals at integer pixels (u, v).

    Returns ``(normals (N, 3), valid (N,), flagged (N,))``. ``flagged``
    marks windows where points across a depth discontinuity were dropped.
    Normals are oriented towards the camera (n . p < 0).
    """
    u = np.asarray(u, dtype=int).reshape(-1)
    v = np.asarray(v, dtype=int).reshape(-1)
    h, w = frame.shape
    offs = np.arange(-window, window + 1)
    du, dv = np.meshgrid(offs, offs)
    uu = u[:, None] + du.reshape(1, -1)
    vv = v[:, None] + dv.reshape(1, -1)
    inside = (uu >= 0) & (uu < w) & (vv >= 0) & (vv < h)
    uu_c = np.clip(uu, 0, w - 1)
    vv_c = np.clip(vv, 0, h - 1)
    z = np.where(inside, frame.depth[vv_c, uu_c], 0.0)
    zc = frame.depth[np.clip(v, 0, h - 1), np.clip(u, 0, w - 1)]
    mask = z > 0
    gate = DISCONTINUITY_REL * zc + 3.0 * axial_std(zc)
    near = np.abs(z - zc[:, None]) <= gate[:, None]
    flagged = (mask & ~near).any(axis=1)
    mask &= near & (zc[:, None] > 0)

    K = frame.intrinsics
    zm = np.where(mask, z, 0.0)
    pts = np.stack([(uu_c - K.cx) * (zm / K.fx), (vv_c - K.cy) * (zm / K.fy), zm], axis=-1)
    cnt = mask.sum(axis=1)
    s1 = pts.sum(axis=1)
    mean = s1 / np.maximum(cnt, 1)[:, None]
    # masked points are zero, so the raw second moment needs no weights
    scatter = np.swapaxes(pts, 1, 2) @ pts - s1[:, :, None] * mean[:, None, :]
    evals, evecs = np.linalg.eigh(scatter)
    normals = evecs[:, :, 0]
    # the window must span a surface, not a line
    scale = np.maximum(evals[:, 2], 1e-300)
    valid = (cnt >= MIN_POINTS) & (evals[:, 1] > 1e-6 * scale) & (evals[:, 2] > 0)
    flip = np.sum(normals * mean, axis=1) > 0
    normals = np.where(flip[:, None], -normals, normals)
    return normals, valid, flagged


def estimate_normal(frame: Frame, pixel, window: int = 2):
    """Single-pixel convenience wrapper; returns (normal, valid)."""
    n, ok, _ = estimate_normals(frame, np.array([pixel[0]]), np.array([pixel[1]]), window)
    return n[0], bool(ok[0])


def cached_normals(frame: Frame, u: np.ndarray, v: np.ndarray, window: int = 2):
    """``estimate_normals`` memoised per frame and pixel; returns (normals, valid)."""
    cache = frame._normal_cache.get(window)
    if cache is None:
        h, w = frame.shape
        cache = (np.zeros((h, w, 3)), np.zeros((h, w), dtype=bool), np.zeros((h, w), dtype=bool))
        frame._normal_cache[window] = cache
    nrm, ok, done = cache
    u = np.asarray(u, dtype=int)
    v = np.asarray(v, dtype=int)
    todo = ~done[v, u]
    if todo.any():
        # duplicates are harmless, they write identical values
        n_new, ok_new, _ = estimate_normals(frame, u[todo], v[todo], window)
        nrm[v[todo], u[todo]] = n_new
        ok[v[todo], u[todo]] = ok_new
        done[v[todo], u[todo]] = True
    return nrm[v, u], ok[v, u]
