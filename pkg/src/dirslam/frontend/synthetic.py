"""Ray-cast RGB-D renderer for textured planar scenes with ground truth.

Scene files are plain text, one directive per line::

    intrinsics fx fy cx cy width height
    background 0.0
    plane ox oy oz  nx ny nz  ux uy uz  half_u half_v  texture period segment
    box cx cy cz  sx sy sz  texture period segment
    trajectory orbit cx cy cz radius height step_deg [phase_deg]
    trajectory static px py pz  tx ty tz
    noise on|off

A box expands to six rectangles whose segment ids are ``segment + face``.
World z is up; cameras look along their +z axis with y pointing down.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from dirslam.directional import normalize, orthonormal_tangents
from dirslam.frontend.camera import MAX_DEPTH, MIN_DEPTH, Frame, Intrinsics
from dirslam.frontend.noise import axial_std
from dirslam.lie import Pose

TEXTURES = ("checker", "stripes", "smooth", "flat")
FRAME_RATE = 30.0
UP = np.array([0.0, 0.0, 1.0])


@dataclass
class Surface:
    """Textured rectangle: origin + a u + b v with |a| <= half_u, |b| <= half_v."""

    origin: np.ndarray
    normal: np.ndarray
    u: np.ndarray
    half_u: float
    half_v: float
    texture: str = "smooth"
    period: float = 0.2
    segment: int = 0

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        self.normal = normalize(np.asarray(self.normal, dtype=float))
        u = np.asarray(self.u, dtype=float)
        u = u - self.normal * (u @ self.normal)
        if np.linalg.norm(u) < 1e-9:
            u = orthonormal_tangents(self.normal)[0]
        self.u = normalize(u)
        if self.texture not in TEXTURES:
            raise ValueError(f"unknown texture {self.texture!r}")

    @property
    def v(self) -> np.ndarray:
        return np.cross(self.normal, self.u)

    def shade(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        p = self.period
        # per-surface phase keeps neighbouring patches distinguishable
        ph = 0.37 * (self.segment % 7)
        if self.texture == "checker":
            return np.where((np.floor(a / p) + np.floor(b / p)) % 2 == 0, 0.8, 0.2)
        if self.texture == "stripes":
            return 0.5 + 0.35 * np.sin(2.0 * np.pi * a / p + ph)
        if self.texture == "smooth":
            return (0.5 + 0.2 * np.sin(2.0 * np.pi * a / p + ph)
                    + 0.2 * np.sin(2.0 * np.pi * b / (1.618 * p) + 2 * ph))
        return np.full(np.shape(a), 0.3 + 0.1 * (self.segment % 5))


def box_faces(center, size, texture="smooth", period=0.2, segment=0) -> list[Surface]:
    c = np.asarray(center, dtype=float)
    s = 0.5 * np.asarray(size, dtype=float)
    faces = []
    for axis in range(3):
        for k, sign in enumerate((1.0, -1.0)):
            n = np.zeros(3)
            n[axis] = sign
            a1, a2 = (axis + 1) % 3, (axis + 2) % 3
            u = np.zeros(3)
            u[a1] = 1.0
            faces.append(Surface(c + n * s[axis], n, u, s[a1], s[a2], texture, period,
                                 segment + 2 * axis + k))
    return faces


def look_at(position, target, up=UP) -> Pose:
    """Camera-to-world pose at ``position`` looking at ``target``."""
    p = np.asarray(position, dtype=float)
    z = normalize(np.asarray(target, dtype=float) - p)
    x = np.cross(z, up)
    if np.linalg.norm(x) < 1e-9:
        x = orthonormal_tangents(z)[0]
    x = normalize(x)
    y = np.cross(z, x)
    return Pose(np.stack([x, y, z], axis=1), p)


@dataclass
class Trajectory:
    kind: str = "static"
    params: tuple = (0.0, 0.0, 0.0, 0.0, 1.0, 0.0)

    def pose(self, k: int) -> Pose:
        if self.kind == "static":
            return look_at(self.params[:3], self.params[3:6])
        if self.kind == "orbit":
            cx, cy, cz, radius, height, step = self.params[:6]
            phase = self.params[6] if len(self.params) > 6 else 0.0
            th = np.deg2rad(phase + step * k)
            centre = np.array([cx, cy, cz])
            pos = centre + np.array([radius * np.cos(th), radius * np.sin(th), height])
            return look_at(pos, centre)
        raise ValueError(f"unknown trajectory {self.kind!r}")

    def line(self) -> str:
        return "trajectory " + self.kind + " " + " ".join(repr(float(x)) for x in self.params)


@dataclass
class SyntheticScene:
    surfaces: list[Surface] = field(default_factory=list)
    intrinsics: Intrinsics = field(default_factory=Intrinsics.default)
    trajectory: Trajectory = field(default_factory=Trajectory)
    background: float = 0.0
    noise: bool = False

    def pose(self, k: int) -> Pose:
        return self.trajectory.pose(k)

    def segments(self) -> np.ndarray:
        return np.array(sorted({s.segment for s in self.surfaces}), dtype=int)

    def render(self, k: int, rng: np.random.Generator | None = None,
               noise: bool | None = None) -> tuple[Frame, Pose]:
        """Frame ``k`` of the trajectory and its ground-truth pose."""
        pose = self.pose(k)
        use_noise = self.noise if noise is None else noise
        frame = render_synthetic(self, pose, self.intrinsics, use_noise, rng, k / FRAME_RATE)
        return frame, pose

    def to_text(self) -> str:
        K = self.intrinsics
        out = [f"intrinsics {K.fx!r} {K.fy!r} {K.cx!r} {K.cy!r} {K.width} {K.height}",
               f"background {self.background!r}",
               f"noise {'on' if self.noise else 'off'}",
               self.trajectory.line()]
        for s in self.surfaces:
            vals = [*s.origin, *s.normal, *s.u, s.half_u, s.half_v]
            out.append("plane " + " ".join(repr(float(x)) for x in vals)
                       + f" {s.texture} {s.period!r} {s.segment}")
        return "\n".join(out) + "\n"


def parse_scene(text: str) -> SyntheticScene:
    scene = SyntheticScene()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, *rest = line.split()
        try:
            if key == "intrinsics":
                fx, fy, cx, cy = map(float, rest[:4])
                scene.intrinsics = Intrinsics(fx, fy, cx, cy, int(rest[4]), int(rest[5]))
            elif key == "background":
                scene.background = float(rest[0])
            elif key == "noise":
                scene.noise = rest[0].lower() in ("on", "true", "1", "yes")
            elif key == "plane":
                v = list(map(float, rest[:11]))
                scene.surfaces.append(Surface(v[0:3], v[3:6], v[6:9], v[9], v[10], rest[11],
                                              float(rest[12]), int(rest[13])))
            elif key == "box":
                v = list(map(float, rest[:6]))
                scene.surfaces.extend(box_faces(v[:3], v[3:6], rest[6], float(rest[7]),
                                                int(rest[8])))
            elif key == "trajectory":
                scene.trajectory = Trajectory(rest[0], tuple(map(float, rest[1:])))
            else:
                raise ValueError(f"unknown directive {key!r}")
        except (IndexError, ValueError) as exc:
            raise ValueError(f"scene line {lineno}: {raw.strip()!r}: {exc}") from exc
    return scene


def load_scene(path) -> SyntheticScene:
    return parse_scene(Path(path).read_text())


def render_synthetic(scene: SyntheticScene, pose: Pose, intrinsics: Intrinsics | None = None,
                     noise: bool = False, rng: np.random.Generator | None = None,
                     timestamp: float = 0.0) -> Frame:
    """Ray-cast depth, intensity, surface ids and camera-frame normals.

    Depth is the camera z of the nearest hit; pixels without a hit get
    depth 0 and surface id -1. With ``noise`` each depth is perturbed by
    the axial model sigma_z(z).
    """
    K = intrinsics or scene.intrinsics
    rays_cam = K.rays()  # z component 1, so the ray parameter is depth
    d = rays_cam @ pose.R.T
    c = pose.t
    h, w = K.height, K.width
    depth = np.full((h, w), np.inf)
    inten = np.full((h, w), float(scene.background))
    sid = np.full((h, w), -1, dtype=np.int64)
    nrm = np.zeros((h, w, 3))
    for s in scene.surfaces:
        den = d @ s.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((s.origin - c) @ s.normal) / den
        ok = np.isfinite(t) & (t > 0) & (t < depth) & (np.abs(den) > 1e-12)
        if not ok.any():
            continue
        p = c + np.where(ok, t, 0.0)[..., None] * d - s.origin
        a = p @ s.u
        b = p @ s.v
        ok &= (np.abs(a) <= s.half_u) & (np.abs(b) <= s.half_v)
        if not ok.any():
            continue
        depth[ok] = t[ok]
        inten[ok] = s.shade(a[ok], b[ok])
        sid[ok] = s.segment
        # face the camera
        n_cam = s.normal @ pose.R
        flip = np.where(den[ok] > 0, -1.0, 1.0)
        nrm[ok] = flip[:, None] * n_cam[None, :]
    hit = np.isfinite(depth)
    depth = np.where(hit, depth, 0.0)
    if noise:
        rng = rng if rng is not None else np.random.default_rng()
        depth = np.where(hit, depth + axial_std(depth) * rng.standard_normal(depth.shape), 0.0)
    valid = (depth >= MIN_DEPTH) & (depth <= MAX_DEPTH)
    sid = np.where(valid, sid, -1)
    rgb = np.repeat(inten[..., None], 3, axis=2)
    return Frame(timestamp, inten, depth, K, rgb=rgb, surface_id=sid, true_normal=nrm)


# -- stock scenes ------------------------------------------------------------------


def three_plane_scene(texture: str = "smooth", period: float = 0.25, orbit_step: float = 0.3,
                      noise: bool = True, gap: float = 0.02) -> SyntheticScene:
    """Floor and two orthogonal walls seen from an orbit inside the corner.

    The panels are separated by ``gap`` so that no pixel mixes two
    textures on a continuous depth surface.
    """
    g = 0.5 * gap
    surfaces = [
        Surface([1.5 + g, 1.5 + g, 0.0], [0, 0, 1], [1, 0, 0], 1.5 - g, 1.5 - g, texture, period, 0),
        Surface([0.0, 1.5 + g, 1.0 + g], [1, 0, 0], [0, 1, 0], 1.5 - g, 1.0 - g, texture, period,
                1),
        Surface([1.5 + g, 0.0, 1.0 + g], [0, 1, 0], [1, 0, 0], 1.5 - g, 1.0 - g, texture, period,
                2),
    ]
    traj = Trajectory("orbit", (0.3, 0.3, 0.2, 1.6, 0.9, orbit_step, 15.0))
    return SyntheticScene(surfaces, Intrinsics.default(), traj, 0.0, noise)


def room_scene(n_planes: int = 10, seed: int = 0, texture: str = "smooth") -> SyntheticScene:
    """Closed box room plus extra free-standing panels, ``n_planes`` surfaces total."""
    rng = np.random.default_rng(seed)
    room = box_faces([0, 0, 1.25], [6.0, 5.0, 2.5], texture, 0.3, 0)
    surfaces = list(room)
    k = len(surfaces)
    while len(surfaces) < n_planes:
        n = normalize(rng.normal(size=3) * np.array([1.0, 1.0, 0.3]))
        o = np.array([rng.uniform(-2, 2), rng.uniform(-1.5, 1.5), rng.uniform(0.5, 2.0)])
        surfaces.append(Surface(o, n, orthonormal_tangents(n)[0], 0.5, 0.4, texture, 0.2, k))
        k += 1
    traj = Trajectory("orbit", (0.0, 0.0, 1.2, 0.5, 0.2, 1.0))
    return SyntheticScene(surfaces[:max(n_planes, 1)], Intrinsics.default(), traj, 0.0, False)
