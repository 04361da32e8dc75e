"""Depth-camera noise model (quadratic axial, depth-proportional lateral)."""

from __future__ import annotations

import numpy as np

from dirslam.frontend.camera import Intrinsics

AXIAL_BASE = 0.0012
AXIAL_QUAD = 0.0019
AXIAL_VERTEX = 0.4
LATERAL_PX = 0.8


def axial_std(z, base: float = AXIAL_BASE, quad: float = AXIAL_QUAD,
              vertex: float = AXIAL_VERTEX):
    """sigma_z(z) = base + quad (z - vertex)^2 in metres."""
    z = np.asarray(z, dtype=float)
    out = base + quad * (z - vertex) ** 2
    return out if out.ndim else float(out)


def lateral_std(z, focal: float, lateral_px: float = LATERAL_PX):
    z = np.asarray(z, dtype=float)
    out = z * lateral_px / focal
    return out if out.ndim else float(out)


def depth_noise_cov(z, pixel, intrinsics: Intrinsics) -> np.ndarray:
    """Camera-frame 3x3 covariance of a back-projected depth sample.

    Diagonal (sigma_xy^2, sigma_xy^2, sigma_z^2) in a frame whose third
    axis is the viewing ray, rotated into the camera frame. Vectorised
    over leading dimensions of ``z`` and ``pixel`` (..., 2).
    """
    z = np.asarray(z, dtype=float)
    pixel = np.asarray(pixel, dtype=float)
    ray = np.stack([(pixel[..., 0] - intrinsics.cx) / intrinsics.fx,
                    (pixel[..., 1] - intrinsics.cy) / intrinsics.fy,
                    np.ones(pixel.shape[:-1])], axis=-1)
    ray /= np.linalg.norm(ray, axis=-1, keepdims=True)
    sz2 = axial_std(z) ** 2
    sxy2 = lateral_std(z, 0.5 * (intrinsics.fx + intrinsics.fy)) ** 2
    # sxy2 I + (sz2 - sxy2) r r^T has eigenvalues {sz2, sxy2, sxy2}
    eye = np.broadcast_to(np.eye(3), ray.shape[:-1] + (3, 3))
    rrT = ray[..., :, None] * ray[..., None, :]
    return np.asarray(sxy2)[..., None, None] * eye + np.asarray(sz2 - sxy2)[..., None, None] * rrT
