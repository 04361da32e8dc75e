"""Reader and writer for the TUM RGB-D sequence layout."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
from PIL import Image

from dirslam.frontend.camera import Frame, Intrinsics
from dirslam.lie import Pose

log = logging.getLogger(__name__)

DEPTH_SCALE = 5000.0
MAX_DT = 0.02


def read_file_list(path) -> list[tuple[float, list[str]]]:
    """Timestamped lines of a TUM list file, comments skipped."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"missing TUM list file: {path}")
    out = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.replace(",", " ").split()
        out.append((float(parts[0]), parts[1:]))
    return out


def associate(a: list[float], b: list[float], max_dt: float = MAX_DT) -> list[tuple[int, int]]:
    """Greedy one-to-one nearest-timestamp matching within ``max_dt``.

    Returns index pairs sorted by the first list's order.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) == 0 or len(b) == 0:
        return []
    diff = np.abs(a[:, None] - b[None, :])
    ia, ib = np.nonzero(diff <= max_dt)
    order = np.lexsort((ib, ia, diff[ia, ib]))
    used_a, used_b, pairs = set(), set(), []
    for k in order:
        i, j = int(ia[k]), int(ib[k])
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        pairs.append((i, j))
    return sorted(pairs)


def read_trajectory(path) -> tuple[np.ndarray, list[Pose]]:
    """TUM trajectory ``t tx ty tz qx qy qz qw`` to (timestamps, poses)."""
    rows = read_file_list(path)
    ts = np.array([t for t, _ in rows], dtype=float)
    poses = []
    for _, vals in rows:
        v = np.asarray(vals[:7], dtype=float)
        poses.append(Pose.from_quaternion(v[:3], v[3:7]))
    return ts, poses


def format_trajectory(timestamps, poses) -> str:
    lines = []
    for t, p in zip(timestamps, poses):
        q = p.quaternion()
        vals = [t, *p.t, *q]
        lines.append(" ".join(f"{x:.9f}" if k else f"{x:.6f}" for k, x in enumerate(vals)))
    return "\n".join(lines) + ("\n" if lines else "")


def write_trajectory(path, timestamps, poses):
    Path(path).write_text(format_trajectory(timestamps, poses))


def load_depth(path) -> np.ndarray:
    raw = np.asarray(Image.open(path), dtype=np.float64)
    return raw / DEPTH_SCALE


def load_rgb(path) -> np.ndarray:
    img = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0
    return img


def rgb_to_intensity(rgb: np.ndarray) -> np.ndarray:
    return rgb @ np.array([0.299, 0.587, 0.114])


def parse_tum_sequence(directory, intrinsics: Intrinsics | None = None, max_dt: float = MAX_DT):
    """Yield ``(frame, gt_pose or None)`` for an RGB-D sequence directory.

    rgb.txt and depth.txt are required; groundtruth.txt is optional.
    Frames whose rgb/depth (or ground truth, when present) cannot be
    matched within ``max_dt`` are skipped with a warning.
    """
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"sequence directory not found: {d}")
    rgb_list = read_file_list(d / "rgb.txt")
    depth_list = read_file_list(d / "depth.txt")
    gt_path = d / "groundtruth.txt"
    gt_ts, gt_poses = read_trajectory(gt_path) if gt_path.is_file() else (None, None)
    K = intrinsics or Intrinsics.default()

    pairs = associate([t for t, _ in rgb_list], [t for t, _ in depth_list], max_dt)
    matched = {i for i, _ in pairs}
    for i, (t, _) in enumerate(rgb_list):
        if i not in matched:
            log.warning("rgb frame %.6f has no depth within %.3f s; skipped", t, max_dt)
    gt_of = {}
    if gt_ts is not None:
        gt_of = dict(associate([rgb_list[i][0] for i, _ in pairs], gt_ts.tolist(), max_dt))
    for k, (i, j) in enumerate(pairs):
        t, (rgb_file, *_) = rgb_list[i]
        gt = None
        if gt_ts is not None:
            if k not in gt_of:
                log.warning("frame %.6f has no ground truth within %.3f s; skipped", t, max_dt)
                continue
            gt = gt_poses[gt_of[k]]
        rgb = load_rgb(d / rgb_file)
        depth = load_depth(d / depth_list[j][1][0])
        yield Frame(t, rgb_to_intensity(rgb), depth, K, rgb=rgb), gt


def write_tum_sequence(directory, frames, gt_poses=None):
    """Write frames as a TUM directory (PNG images, list files, ground truth).

    Depth is quantised to 1/5000 m as 16-bit PNG.
    """
    d = Path(directory)
    (d / "rgb").mkdir(parents=True, exist_ok=True)
    (d / "depth").mkdir(parents=True, exist_ok=True)
    rgb_lines = ["# timestamp filename"]
    depth_lines = ["# timestamp filename"]
    stamps = []
    for f in frames:
        name = f"{f.timestamp:.6f}.png"
        rgb = f.rgb if f.rgb is not None else np.repeat(f.intensity[..., None], 3, axis=2)
        Image.fromarray(np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8)).save(d / "rgb" / name)
        raw = np.clip(np.rint(f.depth * DEPTH_SCALE), 0, 65535).astype(np.uint16)
        Image.fromarray(raw).save(d / "depth" / name)
        rgb_lines.append(f"{f.timestamp:.6f} rgb/{name}")
        depth_lines.append(f"{f.timestamp:.6f} depth/{name}")
        stamps.append(f.timestamp)
    (d / "rgb.txt").write_text("\n".join(rgb_lines) + "\n")
    (d / "depth.txt").write_text("\n".join(depth_lines) + "\n")
    if gt_poses is not None:
        write_trajectory(d / "groundtruth.txt", stamps, gt_poses)
