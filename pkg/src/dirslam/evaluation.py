"""Trajectory (ATE) and segmentation accuracy metrics."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from dirslam.frontend.tum import MAX_DT, associate, read_trajectory
from dirslam.lie import Pose

log = logging.getLogger(__name__)

# above this many labels the assignment is solved greedily
HUNGARIAN_MAX_LABELS = 64


@dataclass
class TrajectoryReport:
    rmse: float  # metres
    errors: np.ndarray  # per matched pose, metres
    alignment: Pose  # maps estimated positions onto ground truth
    timestamps: np.ndarray  # estimate timestamps of the matched pairs

    @property
    def matched(self) -> int:
        return len(self.errors)

    def summary(self) -> str:
        e = self.errors
        return (f"matched {self.matched}  ate_rmse {self.rmse:.6f} m  mean {e.mean():.6f}  "
                f"median {np.median(e):.6f}  max {e.max():.6f}")


def rigid_align(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares R, t with dst ~ R src + t (no scale).

    Degenerate point sets (all points equal) get the identity rotation.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    H = (src - mu_s).T @ (dst - mu_d)
    if not np.any(H):
        return np.eye(3), mu_d - mu_s
    U, _, Vt = np.linalg.svd(H)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
    R = Vt.T @ D @ U.T
    return R, mu_d - R @ mu_s


def _load(traj):
    if isinstance(traj, (str, Path)):
        return read_trajectory(traj)
    ts, poses = traj
    return np.asarray(ts, dtype=float), list(poses)


def evaluate_ate(estimated, ground_truth, max_dt: float = MAX_DT) -> TrajectoryReport:
    """Absolute trajectory error after rigid alignment.

    Either argument is a trajectory file or a ``(timestamps, poses)``
    pair. Poses are matched by nearest timestamp within ``max_dt``.
    """
    ts_e, est = _load(estimated)
    ts_g, gt = _load(ground_truth)
    pairs = associate(ts_e, ts_g, max_dt)
    if not pairs:
        raise ValueError("no overlapping timestamps between estimate and ground truth")
    if len(pairs) < 2:
        raise ValueError("ATE needs at least 2 matched timestamps")
    ie, ig = (np.array(x) for x in zip(*pairs))
    pe = np.array([est[i].t for i in ie])
    pg = np.array([gt[i].t for i in ig])
    R, t = rigid_align(pe, pg)
    err = np.linalg.norm(pe @ R.T + t - pg, axis=1)
    return TrajectoryReport(float(np.sqrt(np.mean(err ** 2))), err, Pose(R, t), ts_e[ie])


@dataclass
class SegmentationReport:
    accuracy: float
    n_labels: int
    n_segments: int
    mapping: dict  # predicted label -> matched true segment

    def summary(self) -> str:
        return (f"accuracy {self.accuracy:.4f}  labels {self.n_labels}  "
                f"segments {self.n_segments}")


def confusion(pred: np.ndarray, truth: np.ndarray):
    """(matrix rows=pred, cols=truth, pred keys, truth keys)."""
    pk, pi = np.unique(pred, return_inverse=True)
    tk, ti = np.unique(truth, return_inverse=True)
    C = np.zeros((len(pk), len(tk)), dtype=np.int64)
    np.add.at(C, (pi, ti), 1)
    return C, pk, tk


def evaluate_segmentation(labels, truth) -> SegmentationReport:
    """Fraction of points whose label maps to their true segment.

    The label to segment matching maximises agreement (Hungarian); with
    more than 64 labels a greedy matching is used instead.
    """
    labels = np.asarray(labels).reshape(-1)
    truth = np.asarray(truth).reshape(-1)
    if labels.shape != truth.shape:
        raise ValueError(f"{len(labels)} labels for {len(truth)} ground-truth entries")
    if len(labels) == 0:
        return SegmentationReport(1.0, 0, 0, {})
    C, pk, tk = confusion(labels, truth)
    if len(pk) > HUNGARIAN_MAX_LABELS:
        log.warning("%d labels exceed %d; matching greedily", len(pk), HUNGARIAN_MAX_LABELS)
        rows, cols = _greedy_match(C)
    else:
        rows, cols = linear_sum_assignment(-C)
    hit = int(C[rows, cols].sum())
    mapping = {int(pk[r]): int(tk[c]) for r, c in zip(rows, cols)}
    return SegmentationReport(hit / len(labels), len(pk), len(tk), mapping)


def _greedy_match(C: np.ndarray):
    order = np.argsort(-C, axis=None, kind="stable")
    used_r, used_c, rows, cols = set(), set(), [], []
    for flat in order.tolist():
        r, c = divmod(flat, C.shape[1])
        if r in used_r or c in used_c:
            continue
        used_r.add(r)
        used_c.add(c)
        rows.append(r)
        cols.append(c)
        if len(rows) == min(C.shape):
            break
    return np.array(rows, dtype=int), np.array(cols, dtype=int)


def read_segments(path) -> np.ndarray:
    """One integer segment id per line."""
    text = Path(path).read_text().split()
    return np.array([int(x) for x in text], dtype=np.int64)
