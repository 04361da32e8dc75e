"""Pinhole camera model, RGB-D frames and image pyramids."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MIN_DEPTH = 0.1
MAX_DEPTH = 10.0


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    @classmethod
    def default(cls) -> "Intrinsics":
        # TUM/Kinect-style VGA camera
        return cls(525.0, 525.0, 319.5, 239.5, 640, 480)

    def scaled(self, level: int) -> "Intrinsics":
        """Intrinsics of pyramid ``level`` (each level halves resolution)."""
        s = 0.5 ** level
        return Intrinsics(self.fx * s, self.fy * s,
                          (self.cx + 0.5) * s - 0.5, (self.cy + 0.5) * s - 0.5,
                          self.width >> level, self.height >> level)

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def project(self, x: np.ndarray) -> np.ndarray:
        """Camera-frame points (..., 3) to pixel coordinates (..., 2)."""
        x = np.asarray(x, dtype=float)
        z = x[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * x[..., 0] / z + self.cx
            v = self.fy * x[..., 1] / z + self.cy
        return np.stack([u, v], axis=-1)

    def backproject(self, u, v, z) -> np.ndarray:
        u, v, z = (np.asarray(a, dtype=float) for a in (u, v, z))
        return np.stack([(u - self.cx) / self.fx * z, (v - self.cy) / self.fy * z, z], axis=-1)

    def rays(self) -> np.ndarray:
        """Per-pixel ray directions with unit z component, shape (H, W, 3)."""
        v, u = np.mgrid[0:self.height, 0:self.width].astype(float)
        return self.backproject(u, v, np.ones_like(u))

    def in_image(self, uv: np.ndarray, margin: float = 0.0) -> np.ndarray:
        u, v = uv[..., 0], uv[..., 1]
        return ((u >= margin) & (v >= margin)
                & (u <= self.width - 1 - margin) & (v <= self.height - 1 - margin))


def image_gradient(intensity: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference gradient (d/du, d/dv); one-sided at the border."""
    gv, gu = np.gradient(np.asarray(intensity, dtype=float))
    return gu, gv


@dataclass
class Frame:
    """One RGB-D frame. Depth in metres, 0 marks invalid pixels."""

    timestamp: float
    intensity: np.ndarray
    depth: np.ndarray
    intrinsics: Intrinsics
    rgb: np.ndarray | None = None
    # synthetic frames carry per-pixel ground truth
    surface_id: np.ndarray | None = None
    true_normal: np.ndarray | None = None
    _grad: tuple | None = field(default=None, repr=False)
    _normal_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.intensity = np.asarray(self.intensity, dtype=float)
        d = np.asarray(self.depth, dtype=float)
        d = np.where(np.isfinite(d) & (d >= MIN_DEPTH) & (d <= MAX_DEPTH), d, 0.0)
        self.depth = d

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape

    @property
    def gradient(self) -> tuple[np.ndarray, np.ndarray]:
        if self._grad is None:
            self._grad = image_gradient(self.intensity)
        return self._grad

    @property
    def gradient_magnitude(self) -> np.ndarray:
        gu, gv = self.gradient
        return np.hypot(gu, gv)

    def valid(self) -> np.ndarray:
        return self.depth > 0

    def point(self, u, v) -> np.ndarray:
        """Back-projected camera-frame point(s) at integer pixel(s)."""
        u = np.asarray(u, dtype=int)
        v = np.asarray(v, dtype=int)
        return self.intrinsics.backproject(u, v, self.depth[v, u])

    def downsample(self) -> "Frame":
        """Half-resolution frame: 2x2 mean intensity, mean of valid depths."""
        h, w = self.shape
        h2, w2 = h // 2, w // 2
        inten = self.intensity[:2 * h2, :2 * w2].reshape(h2, 2, w2, 2).mean(axis=(1, 3))
        d = self.depth[:2 * h2, :2 * w2].reshape(h2, 2, w2, 2)
        valid = d > 0
        cnt = valid.sum(axis=(1, 3))
        # only average blocks that are fully valid; mixed blocks straddle edges
        depth = np.where(cnt == 4, d.sum(axis=(1, 3)) / 4.0, 0.0)
        return Frame(self.timestamp, inten, depth, self.intrinsics.scaled(1))


def pyramid(frame: Frame, levels: int) -> list[Frame]:
    out = [frame]
    for _ in range(levels - 1):
        out.append(out[-1].downsample())
    return out


def bilinear(image: np.ndarray, u: np.ndarray, v: np.ndarray):
    """Bilinear samples of ``image`` at float pixels with exact partials.

    Returns (value, d/du, d/dv); the partials are those of the bilinear
    interpolant itself, so they agree with finite differences inside a
    cell. Callers must keep (u, v) inside [0, W-1] x [0, H-1].
    """
    h, w = image.shape
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    u0 = np.clip(np.floor(u).astype(int), 0, w - 2)
    v0 = np.clip(np.floor(v).astype(int), 0, h - 2)
    a = u - u0
    b = v - v0
    i00 = image[v0, u0]
    i10 = image[v0, u0 + 1]
    i01 = image[v0 + 1, u0]
    i11 = image[v0 + 1, u0 + 1]
    top = i00 + a * (i10 - i00)
    bot = i01 + a * (i11 - i01)
    val = top + b * (bot - top)
    du = (1.0 - b) * (i10 - i00) + b * (i11 - i01)
    dv = bot - top
    return val, du, dv
