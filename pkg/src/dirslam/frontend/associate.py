"""Projective data association of published surfels with a frame."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dirslam.frontend.camera import Frame
from dirslam.frontend.noise import depth_noise_cov
from dirslam.frontend.normals import PIPELINE_WINDOW, cached_normals
from dirslam.lie import Pose
from dirslam.surfel_map import OCCLUSION_MAHALANOBIS, MapSnapshot, visibility

MAHALANOBIS_GATE = 3.0
NORMAL_GATE_DEG = 45.0


@dataclass
class ObservationBatch:
    """One frame's associated observations, camera frame.

    ``rows`` index the snapshot the batch was built from; ``pruned`` are
    snapshot surfel ids that were behind, back-facing or occluded.
    """

    ids: np.ndarray
    rows: np.ndarray
    x_cam: np.ndarray
    n_cam: np.ndarray
    intensity: np.ndarray
    cov: np.ndarray
    pixel: np.ndarray
    pruned: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)

    def take(self, idx) -> "ObservationBatch":
        return ObservationBatch(self.ids[idx], self.rows[idx], self.x_cam[idx], self.n_cam[idx],
                                self.intensity[idx], self.cov[idx], self.pixel[idx], self.pruned)

    @classmethod
    def empty(cls) -> "ObservationBatch":
        z = np.zeros
        return cls(z(0, dtype=int), z(0, dtype=int), z((0, 3)), z((0, 3)), z(0), z((0, 3, 3)),
                   z((0, 2), dtype=int), z(0, dtype=int))


def associate(snapshot: MapSnapshot, frame: Frame, pose: Pose,
              gate: float = MAHALANOBIS_GATE, normal_gate_deg: float = NORMAL_GATE_DEG,
              window: int = PIPELINE_WINDOW, rows: np.ndarray | None = None,
              check_normals: bool = True) -> ObservationBatch:
    """Match snapshot surfels to the pixels they project to.

    A surfel is observed when the back-projected point at its pixel lies
    within ``gate`` Mahalanobis distance under the surfel covariance plus
    the measurement noise, and the estimated normal there agrees within
    ``normal_gate_deg``. With ``check_normals=False`` only the position
    gate applies and ``n_cam`` is left zero.
    """
    if len(snapshot) == 0:
        return ObservationBatch.empty()
    rows = np.arange(len(snapshot)) if rows is None else np.asarray(rows, dtype=int)
    vis = visibility(snapshot.position[rows], snapshot.normal[rows], snapshot.cov[rows], frame,
                     pose, OCCLUSION_MAHALANOBIS)
    pruned = snapshot.ids[rows[vis["behind"] | vis["back_facing"] | vis["occluded"]]]
    cand = np.flatnonzero(vis["in_view"] & ~vis["back_facing"] & ~vis["occluded"])
    if len(cand) == 0:
        out = ObservationBatch.empty()
        out.pruned = pruned
        return out
    pix = vis["pixel"][cand]
    u, v = pix[:, 0], pix[:, 1]
    x = frame.intrinsics.backproject(u, v, frame.depth[v, u])
    p_cam = vis["x_cam"][cand]
    R = pose.R
    cov_obs = depth_noise_cov(x[:, 2], pix.astype(float), frame.intrinsics)
    cov_map = R.T @ snapshot.cov[rows[cand]] @ R
    d = x - p_cam
    m2 = np.sum(d * np.linalg.solve(cov_obs + cov_map, d[..., None])[..., 0], axis=1)
    ok = m2 <= gate * gate
    n_obs = np.zeros_like(x)
    if check_normals:
        # normals only where the position gate already passed
        n_obs[ok], n_ok = cached_normals(frame, u[ok], v[ok], window)
        n_map = snapshot.normal[rows[cand[ok]]] @ R
        ok[ok] = n_ok & (np.sum(n_obs[ok] * n_map, axis=1) >= np.cos(np.deg2rad(normal_gate_deg)))
    sel = cand[ok]
    return ObservationBatch(
        ids=snapshot.ids[rows[sel]], rows=rows[sel], x_cam=x[ok], n_cam=n_obs[ok],
        intensity=frame.intensity[v[ok], u[ok]], cov=cov_obs[ok], pixel=pix[ok],
        pruned=pruned)
