"""Gradient-biased sampling of new surfel seeds on unobserved pixels."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from dirslam.frontend.camera import Frame
from dirslam.frontend.normals import PIPELINE_WINDOW, estimate_normals
from dirslam.lie import Pose
from dirslam.surfel_map import MapSnapshot, visibility

BUDGET = 300
GRADIENT_FLOOR = 0.05
COVER_RADIUS_PX = 6
# candidates drawn per budget slot before thinning
OVERSAMPLE = 8


def coverage_mask(snapshot: MapSnapshot, frame: Frame, pose: Pose,
                  radius_px: int = COVER_RADIUS_PX) -> np.ndarray:
    """Pixels within ``radius_px`` of a visible surfel projection."""
    h, w = frame.shape
    mask = np.zeros((h, w), dtype=bool)
    if len(snapshot) == 0:
        return mask
    vis = visibility(snapshot.position, snapshot.normal, snapshot.cov, frame, pose)
    seen = vis["in_view"] & ~vis["back_facing"] & ~vis["occluded"]
    pix = vis["pixel"][seen]
    mask[pix[:, 1], pix[:, 0]] = True
    if radius_px > 0:
        r = int(radius_px)
        yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
        mask = ndimage.binary_dilation(mask, structure=xx * xx + yy * yy <= r * r)
    return mask


def sampling_weights(frame: Frame, eps_rel: float = GRADIENT_FLOOR) -> np.ndarray:
    """eps + |grad I| with eps = eps_rel * max |grad I| (1 if the image is flat)."""
    g = frame.gradient_magnitude
    gmax = float(g.max()) if g.size else 0.0
    eps = eps_rel * gmax if gmax > 0 else 1.0
    return eps + g


def _disk(radius_px: int) -> np.ndarray:
    r = int(radius_px)
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return xx * xx + yy * yy <= r * r


def extract_new_surfels(frame: Frame, pose: Pose, snapshot: MapSnapshot,
                        rng: np.random.Generator, budget: int = BUDGET,
                        eps_rel: float = GRADIENT_FLOOR, radius_px: int = COVER_RADIUS_PX,
                        window: int = PIPELINE_WINDOW):
    """Seed pixels (N, 2) as (u, v) and their camera-frame normals.

    Uncovered pixels with valid depth are drawn without replacement with
    probability proportional to eps + |grad I|. Candidates are accepted
    in draw order unless they fall inside the coverage disk of a seed
    accepted before them, and seeds whose normal is invalid are dropped.
    """
    covered = coverage_mask(snapshot, frame, pose, radius_px)
    free = frame.valid() & ~covered
    # keep the normal window inside the image
    free[:window], free[-window:], free[:, :window], free[:, -window:] = False, False, False, False
    vv, uu = np.nonzero(free)
    if len(uu) == 0 or budget <= 0:
        return np.zeros((0, 2), dtype=int), np.zeros((0, 3))
    wts = sampling_weights(frame, eps_rel)[vv, uu]
    n_draw = min(OVERSAMPLE * budget, len(uu))
    pick = rng.choice(len(uu), size=n_draw, replace=False, p=wts / wts.sum())
    u, v = uu[pick], vv[pick]
    if radius_px > 0:
        r = int(radius_px)
        disk = _disk(r)
        h, w = frame.shape
        taken = np.zeros((h + 2 * r, w + 2 * r), dtype=bool)
        keep = []
        for k, (a, b) in enumerate(zip(u.tolist(), v.tolist())):
            if taken[b + r, a + r]:
                continue
            keep.append(k)
            taken[b:b + 2 * r + 1, a:a + 2 * r + 1] |= disk
            if len(keep) == budget:
                break
        keep = np.asarray(keep, dtype=int)
    else:
        keep = np.arange(min(budget, n_draw))
    u, v = u[keep], v[keep]
    order = np.lexsort((u, v))
    u, v = u[order], v[order]
    n, ok, _ = estimate_normals(frame, u, v, window)
    return np.stack([u[ok], v[ok]], axis=1), n[ok]
