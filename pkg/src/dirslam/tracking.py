"""
Direction-aware incremental ICP.

Each Gauss-Newton iteration re-associates the published map with the
frame, orders candidate surfels round-robin across their directional
segments (highest image gradient first within a segment) and adds them
one at a time until the information matrix is both large enough in
volume (entropy bound) and in every direction (smallest eigenvalue).
Because information only grows as rows are added, the stopping point is
found by bisection over prefix sums.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from dirslam.frontend.associate import ObservationBatch, associate
from dirslam.frontend.camera import Frame, bilinear, pyramid
from dirslam.frontend.noise import axial_std
from dirslam.lie import Pose
from dirslam.surfel_map import SIGMA_PL, MapSnapshot

log = logging.getLogger(__name__)

LOG_2PIE = float(np.log(2.0 * np.pi * np.e))
H_MAX = -32.0
LAMBDA_MIN = 3e4
LAMBDA_I = 0.1
SIGMA_I = 0.05
# relative eigenvalue floor below which the information matrix counts as singular
SINGULAR_REL = 1e-12
# photometric rows need the interpolation cell to lie on the surfel's surface
# step norm; re-selection keeps steps from shrinking much below this
STEP_TOL = 3e-4
# first batch of candidate rows built during selection
SELECT_CHUNK = 1024
DEPTH_GATE_REL = 0.03
PHOTO_GATE = 3.0


@dataclass
class TrackerConfig:
    h_max: float = H_MAX
    lambda_min: float = LAMBDA_MIN
    lambda_i: float = LAMBDA_I
    sigma_i: float = SIGMA_I
    sigma_pl: float = SIGMA_PL
    levels: int = 2
    max_iterations: int = 10
    max_halvings: int = 5
    tol: float = STEP_TOL
    budget: int = 0  # 0 means unlimited
    selection: str = "direction"  # or "random"
    photometric: bool = True


def entropy_bound(JTJ: np.ndarray) -> float:
    """3 log(2 pi e) - 0.5 log|JTJ|; +inf when the determinant is not positive."""
    sign, logdet = np.linalg.slogdet(np.asarray(JTJ, dtype=float))
    if sign <= 0 or not np.isfinite(logdet):
        return float("inf")
    return 3.0 * LOG_2PIE - 0.5 * float(logdet)


def _min_eig(JTJ: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(0.5 * (JTJ + JTJ.T))[0])


@dataclass
class IcpWorkspace:
    """Running normal equations of the selected rows."""

    JTJ: np.ndarray = field(default_factory=lambda: np.zeros((6, 6)))
    JTb: np.ndarray = field(default_factory=lambda: np.zeros(6))
    cost: float = 0.0
    selected: int = 0
    cursors: dict = field(default_factory=dict)

    def add(self, J: np.ndarray, e: np.ndarray):
        J = np.atleast_2d(J)
        e = np.atleast_1d(e)
        self.JTJ += J.T @ J
        self.JTb += J.T @ e
        self.cost += float(e @ e)
        self.selected += 1

    @property
    def entropy(self) -> float:
        return entropy_bound(self.JTJ)

    @property
    def lambda_min(self) -> float:
        return _min_eig(self.JTJ)


# -- residuals -------------------------------------------------------------------------


@dataclass
class Correspondences:
    """Map estimates paired with their associated observations."""

    position: np.ndarray  # p_bar, world
    normal: np.ndarray  # n_bar, world
    cov: np.ndarray  # Sigma_bar, world
    intensity: np.ndarray  # I_i
    x_cam: np.ndarray  # x^p, camera frame
    obs_cov: np.ndarray  # Sigma_O, camera frame

    def take(self, idx) -> "Correspondences":
        return Correspondences(*(getattr(self, f)[idx] for f in self.__dataclass_fields__))

    def __len__(self) -> int:
        return len(self.position)

    @classmethod
    def from_batch(cls, snap: MapSnapshot, batch: ObservationBatch) -> "Correspondences":
        r = batch.rows
        return cls(snap.position[r], snap.normal[r], snap.cov[r], snap.intensity[r],
                   batch.x_cam, batch.cov)


def _depth_consistent(frame: Frame, u, v, z) -> np.ndarray:
    """True where all four pixels of the bilinear cell see the same surface as z."""
    h, w = frame.shape
    u0 = np.clip(np.floor(u).astype(int), 0, w - 2)
    v0 = np.clip(np.floor(v).astype(int), 0, h - 2)
    gate = DEPTH_GATE_REL * z + 3.0 * axial_std(z)
    ok = np.ones(len(u), dtype=bool)
    for du, dv in ((0, 0), (1, 0), (0, 1), (1, 1)):
        d = frame.depth[v0 + dv, u0 + du]
        ok &= (d > 0) & (np.abs(d - z) <= gate)
    return ok


def residuals_and_jacobians(corr: Correspondences, pose: Pose, frame: Frame,
                            cfg: TrackerConfig = TrackerConfig()):
    """Whitened residuals and d/d omega of both cost terms, per surfel.

    Returns ``e (N, 2)``, ``J (N, 2, 6)`` and ``valid (N, 2)``; column 0
    is point-to-plane, column 1 photometric. Rows that are not valid are
    zeroed.
    """
    R, t = pose.R, pose.t
    n = corr.normal
    q = corr.x_cam @ R.T + t
    m = n @ R  # normal in the camera frame
    var = (np.sum(m * (corr.obs_cov @ m[:, :, None])[..., 0], axis=1)
           + np.sum(n * (corr.cov @ n[:, :, None])[..., 0], axis=1) + cfg.sigma_pl ** 2)
    sd = np.sqrt(var)
    N = len(corr)
    e = np.zeros((N, 2))
    J = np.zeros((N, 2, 6))
    valid = np.zeros((N, 2), dtype=bool)
    e[:, 0] = np.sum(n * (q - corr.position), axis=1) / sd
    # n^T R [-[x]_x, I] = [x cross m, m]
    J[:, 0, :3] = np.cross(corr.x_cam, m) / sd[:, None]
    J[:, 0, 3:] = m / sd[:, None]
    # the whitening depends on R through m: dm/dphi = [m]_x, dvar/dphi = 2 (S m) x m
    Sm = (corr.obs_cov @ m[:, :, None])[..., 0]
    J[:, 0, :3] -= (e[:, 0] / var)[:, None] * np.cross(Sm, m)
    valid[:, 0] = True
    if cfg.photometric and cfg.lambda_i > 0:
        K = frame.intrinsics
        y = (corr.position - t) @ R
        z = y[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = K.fx * y[:, 0] / z + K.cx
            v = K.fy * y[:, 1] / z + K.cy
        ok = (z > 1e-6) & np.isfinite(u) & np.isfinite(v)
        ok &= (u >= 0) & (v >= 0) & (u <= K.width - 1) & (v <= K.height - 1)
        ok[ok] = _depth_consistent(frame, u[ok], v[ok], z[ok])
        if ok.any():
            w = np.sqrt(cfg.lambda_i) / cfg.sigma_i
            val, gu, gv = bilinear(frame.intensity, u[ok], v[ok])
            yo, zo = y[ok], z[ok]
            # image gradient pulled back through the projection
            gy = np.stack([gu * K.fx / zo, gv * K.fy / zo,
                           -(gu * K.fx * yo[:, 0] + gv * K.fy * yo[:, 1]) / zo ** 2], axis=1)
            # y(omega) = exp(-omega) y, dy/domega = [[y]_x, -I]
            r = val - corr.intensity[ok]
            # intensity outliers (texture creases, specularities) drop their row
            keep = np.abs(r) <= PHOTO_GATE * cfg.sigma_i
            idx = np.flatnonzero(ok)[keep]
            e[idx, 1] = w * r[keep]
            J[idx, 1, :3] = w * np.cross(gy[keep], yo[keep])
            J[idx, 1, 3:] = -w * gy[keep]
            valid[idx, 1] = True
    return e, J, valid


def icp_residual_jacobian(corr: Correspondences, pose: Pose, frame: Frame,
                          cfg: TrackerConfig = TrackerConfig()):
    """Residual and Jacobian rows of a single correspondence.

    The photometric row is omitted when the surfel projects outside the
    image.
    """
    e, J, valid = residuals_and_jacobians(corr, pose, frame, cfg)
    return e[0][valid[0]], J[0][valid[0]]


def _row_costs(corr: Correspondences, pose: Pose, frame: Frame, cfg: TrackerConfig):
    e, _, valid = residuals_and_jacobians(corr, pose, frame, cfg)
    return np.where(valid, e * e, 0.0), valid


# -- selection ----------------------------------------------------------------------


def selection_order(labels: np.ndarray, gradient: np.ndarray, mode: str = "direction",
                    rng: np.random.Generator | None = None) -> np.ndarray:
    """Order in which candidates are added to the normal equations.

    ``direction``: one surfel from each segment queue in turn, every queue
    sorted by decreasing gradient. ``random``: a uniform permutation.
    """
    n = len(labels)
    if mode == "random":
        rng = rng if rng is not None else np.random.default_rng(0)
        return rng.permutation(n)
    if mode != "direction":
        raise ValueError(f"unknown selection mode {mode!r}")
    order = np.lexsort((np.arange(n), -gradient, labels))
    lab = labels[order]
    start = np.r_[0, np.flatnonzero(np.diff(lab)) + 1]
    sizes = np.diff(np.r_[start, n])
    rank = np.arange(n) - np.repeat(start, sizes)
    return order[np.lexsort((lab, rank))]


def _first_satisfying(cum: np.ndarray, cfg: TrackerConfig) -> int | None:
    """Smallest prefix length whose information meets both thresholds."""

    def ok(k: int) -> bool:
        A = cum[k - 1]
        return entropy_bound(A) <= cfg.h_max and _min_eig(A) >= cfg.lambda_min

    n = len(cum)
    if n == 0 or not ok(n):
        return None
    lo, hi = 1, n
    while lo < hi:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid + 1
    return lo


@dataclass
class Selection:
    idx: np.ndarray
    JTJ: np.ndarray
    JTe: np.ndarray
    satisfied: bool


def select_surfels(corr: Correspondences, labels: np.ndarray, gradient: np.ndarray, pose: Pose,
                   frame: Frame, cfg: TrackerConfig, rng: np.random.Generator | None = None
                   ) -> Selection:
    order = selection_order(labels, gradient, cfg.selection, rng)
    if cfg.budget and cfg.budget > 0:
        order = order[:cfg.budget]
    n = len(order)
    # rows are built in growing chunks along the order; both criteria are
    # monotone in the prefix, so the first satisfying prefix is unchanged
    blocks, grads = [], []
    end, k = 0, None
    while end < n:
        nxt = min(n, max(2 * end, SELECT_CHUNK))
        e, J, _ = residuals_and_jacobians(corr.take(order[end:nxt]), pose, frame, cfg)
        Jt = np.swapaxes(J, 1, 2)
        blocks.append(Jt @ J)
        grads.append((Jt @ e[:, :, None])[..., 0])
        end = nxt
        cum = np.cumsum(np.concatenate(blocks), axis=0)
        k = _first_satisfying(cum, cfg)
        if k is not None:
            break
    if end == 0:
        return Selection(order[:0], np.zeros((6, 6)), np.zeros(6), False)
    satisfied = k is not None
    k = end if k is None else k
    g = np.concatenate(grads)
    return Selection(order[:k], cum[k - 1], g[:k].sum(axis=0), satisfied)


# -- tracker ------------------------------------------------------------------------


@dataclass
class TrackResult:
    pose: Pose
    cov: np.ndarray | None
    lost: bool
    degenerate: bool
    iterations: int
    selected: int
    candidates: int
    entropy: float
    lambda_min: float
    ms: float
    timestamp: float = 0.0

    def row(self) -> dict:
        d = asdict(self)
        for key in ("pose", "cov"):
            d.pop(key)
        return d


def _is_singular(A: np.ndarray) -> bool:
    ev = np.linalg.eigvalsh(0.5 * (A + A.T))
    return not np.all(np.isfinite(ev)) or ev[0] <= SINGULAR_REL * max(ev[-1], 1e-300)


def incremental_icp(frame: Frame, snapshot: MapSnapshot, init: Pose,
                    cfg: TrackerConfig = TrackerConfig(),
                    rng: np.random.Generator | None = None) -> TrackResult:
    """Estimate the camera pose of ``frame`` against ``snapshot``.

    Coarse-to-fine over ``cfg.levels`` pyramid levels. Returns the initial
    pose flagged LOST when no usable information is found.
    """
    t0 = time.perf_counter()
    rng = rng if rng is not None else np.random.default_rng(0)
    frames = pyramid(frame, cfg.levels)
    pose = init.copy()
    pose.cov = None
    iterations = 0
    last: Selection | None = None
    n_cand = 0
    lost = False

    def fail() -> TrackResult:
        out = init.copy()
        return TrackResult(out, None, True, True, iterations, 0, n_cand, float("inf"), 0.0,
                           1e3 * (time.perf_counter() - t0), frame.timestamp)

    if len(snapshot) == 0:
        return fail()
    for level in range(cfg.levels - 1, -1, -1):
        f = frames[level]
        level_rows = None
        for _ in range(cfg.max_iterations):
            if level_rows is None:
                batch = associate(snapshot, f, pose)
                # the normal gate is coarse; evaluate it once per level and
                # only re-gate positions of the surviving rows afterwards
                level_rows = batch.rows
            else:
                batch = associate(snapshot, f, pose, rows=level_rows, check_normals=False)
            n_cand = len(batch)
            if n_cand == 0:
                lost = True
                break
            corr = Correspondences.from_batch(snapshot, batch)
            sel = select_surfels(corr, snapshot.label[batch.rows], snapshot.gradient[batch.rows],
                                 pose, f, cfg, rng)
            iterations += 1
            if len(sel.idx) == 0 or _is_singular(sel.JTJ):
                lost = True
                break
            last = sel
            omega = -np.linalg.solve(sel.JTJ, sel.JTe)
            log.debug("level %d omega %s selected %d", level, omega, len(sel.idx))
            sub = corr.take(sel.idx)
            r0, v0 = _row_costs(sub, pose, f, cfg)
            step = omega
            accepted = False
            for _ in range(cfg.max_halvings + 1):
                cand = pose.retract(step)
                r1, v1 = _row_costs(sub, cand, f, cfg)
                # compare on rows defined at both poses
                both = v0 & v1
                if r1[both].sum() <= r0[both].sum():
                    pose = cand
                    accepted = True
                    break
                step = 0.5 * step
            if not accepted or np.linalg.norm(step) < cfg.tol:
                break
        if lost:
            break
    if lost or last is None:
        return fail()
    cov = np.linalg.inv(last.JTJ)
    cov = 0.5 * (cov + cov.T)
    pose.cov = cov
    return TrackResult(pose, cov, False, not last.satisfied, iterations, len(last.idx), n_cand,
                       entropy_bound(last.JTJ), _min_eig(last.JTJ),
                       1e3 * (time.perf_counter() - t0), frame.timestamp)
