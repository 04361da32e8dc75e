"""
SO(3)/SE(3) primitives.

Tangent vectors are ordered (rotation, translation): omega = (phi, rho).
Poses map camera coordinates to world coordinates, and perturbations are
applied on the right, ``T <- T exp(omega)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

SMALL_ANGLE = 1e-8


def skew(v: np.ndarray) -> np.ndarray:
    """Hat operator; works on (3,) or (N, 3)."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """One Newton step towards the nearest rotation: R (3I - R^T R) / 2.

    Cheap enough to run after every composition; keeps drift at machine
    precision when applied consistently.
    """
    return 0.5 * R @ (3.0 * np.eye(3) - R.T @ R)


def so3_exp(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = float(np.linalg.norm(phi))
    K = skew(phi)
    if theta < SMALL_ANGLE:
        return np.eye(3) + K + 0.5 * K @ K
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta ** 2
    return np.eye(3) + a * K + b * K @ K


def so3_log(R: np.ndarray) -> np.ndarray:
    return Rotation.from_matrix(R).as_rotvec()


def _left_jacobian(phi: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(phi))
    K = skew(phi)
    if theta < SMALL_ANGLE:
        return np.eye(3) + 0.5 * K + K @ K / 6.0
    b = (1.0 - np.cos(theta)) / theta ** 2
    c = (theta - np.sin(theta)) / theta ** 3
    return np.eye(3) + b * K + c * K @ K


def _left_jacobian_inv(phi: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(phi))
    K = skew(phi)
    if theta < SMALL_ANGLE:
        return np.eye(3) - 0.5 * K + K @ K / 12.0
    half = 0.5 * theta
    d = (1.0 - half / np.tan(half)) / theta ** 2
    return np.eye(3) - 0.5 * K + d * K @ K


@dataclass
class Pose:
    """Rigid camera-to-world transform with a 6x6 tangent-space covariance."""

    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))
    cov: np.ndarray | None = None

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=float).reshape(3, 3)
        self.t = np.asarray(self.t, dtype=float).reshape(3)
        if self.cov is not None:
            cov = np.asarray(self.cov, dtype=float).reshape(6, 6)
            self.cov = 0.5 * (cov + cov.T)

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> "Pose":
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3].copy(), T[:3, 3].copy())

    @classmethod
    def from_quaternion(cls, t, q_xyzw) -> "Pose":
        return cls(Rotation.from_quat(np.asarray(q_xyzw, dtype=float)).as_matrix(), t)

    def quaternion(self) -> np.ndarray:
        """(qx, qy, qz, qw) with qw >= 0."""
        q = Rotation.from_matrix(self.R).as_quat()
        return -q if q[3] < 0 else q

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Map camera-frame points (..., 3) to world frame."""
        return np.asarray(x, dtype=float) @ self.R.T + self.t

    def apply_inverse(self, p: np.ndarray) -> np.ndarray:
        """Map world points (..., 3) to the camera frame."""
        return (np.asarray(p, dtype=float) - self.t) @ self.R

    def inverse(self) -> "Pose":
        return Pose(self.R.T, -self.R.T @ self.t)

    def compose(self, other: "Pose") -> "Pose":
        return Pose(orthonormalize(self.R @ other.R), self.R @ other.t + self.t)

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def retract(self, omega: np.ndarray) -> "Pose":
        """T exp(omega), keeping the covariance attached."""
        out = self.compose(se3_exp(omega))
        out.cov = self.cov
        return out

    def copy(self) -> "Pose":
        return Pose(self.R.copy(), self.t.copy(), None if self.cov is None else self.cov.copy())


def se3_exp(omega: np.ndarray) -> Pose:
    omega = np.asarray(omega, dtype=float).reshape(6)
    phi, rho = omega[:3], omega[3:]
    return Pose(so3_exp(phi), _left_jacobian(phi) @ rho)


def se3_log(T: Pose) -> np.ndarray:
    phi = so3_log(T.R)
    rho = _left_jacobian_inv(phi) @ T.t
    return np.concatenate([phi, rho])


def se3_apply(omega: np.ndarray, x: np.ndarray) -> np.ndarray:
    """exp(omega) applied to points (..., 3)."""
    return se3_exp(omega).apply(x)


def point_jacobian(x_cam: np.ndarray, R: np.ndarray) -> np.ndarray:
    """d(T exp(omega) x)/d omega at omega = 0, shape (..., 3, 6).

    Equals R [-[x]_x, I]; used to push pose covariance onto points.
    """
    x_cam = np.asarray(x_cam, dtype=float)
    J = np.empty(x_cam.shape[:-1] + (3, 6))
    J[..., :, :3] = -R @ skew(x_cam)
    J[..., :, 3:] = R
    return J


def rotation_error_deg(Ra: np.ndarray, Rb: np.ndarray) -> float:
    c = 0.5 * (np.trace(Ra.T @ Rb) - 1.0)
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))
