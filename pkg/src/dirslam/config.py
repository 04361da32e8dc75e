"""Run configuration: nested dataclasses with a flat ``section.key = value`` file form."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from dirslam.frontend.extract import BUDGET, COVER_RADIUS_PX, GRADIENT_FLOOR
from dirslam.gibbs import TAU_OBS
from dirslam.surfel_map import KNN_K, KNN_RADIUS, SIGMA_PL
from dirslam import tracking


@dataclass
class InputConfig:
    source: str = "synthetic"  # synthetic | tum
    path: str = ""  # scene file or sequence directory; empty means the stock 3-plane scene
    frames: int = 200  # upper bound on frames read (0 = all)
    noise: bool = True  # synthetic sensor noise


@dataclass
class ModelConfig:
    alpha: float = 1.0
    a: float = 1.0
    b: float = 0.3
    mu0: tuple = (0.0, 0.0, 1.0)
    lam: float = 1.0
    tau_obs: float = TAU_OBS
    sigma_pl: float = SIGMA_PL


@dataclass
class SamplerConfig:
    burn_in: int = 5
    min_samples: int = 10
    sweeps_per_frame: int = 1
    literal_bingham: bool = False


@dataclass
class TrackerSection:
    h_max: float = tracking.H_MAX
    lambda_min: float = tracking.LAMBDA_MIN
    lambda_i: float = tracking.LAMBDA_I
    sigma_i: float = tracking.SIGMA_I
    levels: int = 2
    max_iterations: int = 10
    tol: float = tracking.STEP_TOL
    budget: int = 0
    selection: str = "direction"


@dataclass
class MapConfig:
    k: int = KNN_K
    radius: float = KNN_RADIUS
    budget: int = BUDGET
    cover_radius_px: int = COVER_RADIUS_PX
    gradient_floor: float = GRADIENT_FLOOR
    graph_refresh: int = 500  # existing surfels whose neighbourhood is rebuilt per frame
    violation_limit: int = 3  # free-space violations before a surfel is deleted


@dataclass
class RunSection:
    seed: int = 0
    single_thread: bool = False  # true: deterministic interleaved sweeps
    out: str = "out"
    max_lost: int = 10


@dataclass
class RunConfig:
    input: InputConfig = field(default_factory=InputConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    tracker: TrackerSection = field(default_factory=TrackerSection)
    map: MapConfig = field(default_factory=MapConfig)
    run: RunSection = field(default_factory=RunSection)

    def tracker_config(self) -> tracking.TrackerConfig:
        t = self.tracker
        return tracking.TrackerConfig(
            h_max=t.h_max, lambda_min=t.lambda_min, lambda_i=t.lambda_i, sigma_i=t.sigma_i,
            sigma_pl=self.model.sigma_pl, levels=t.levels, max_iterations=t.max_iterations,
            tol=t.tol,
            budget=t.budget, selection=t.selection)

    # -- text form ------------------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for sec in fields(self):
            obj = getattr(self, sec.name)
            for f in fields(obj):
                lines.append(f"{sec.name}.{f.name} = {_format(getattr(obj, f.name))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        cfg = cls()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected 'section.key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            cfg.set(key, value)
        return cfg

    def set(self, key: str, value: str):
        if "." not in key:
            raise ValueError(f"config key {key!r} lacks a section")
        sec, name = key.split(".", 1)
        obj = getattr(self, sec, None)
        names = {f.name for f in fields(obj)} if obj is not None and hasattr(obj, "__dataclass_fields__") else set()
        if name not in names:
            raise ValueError(f"unknown config key {key!r}")
        setattr(obj, name, _parse(value, getattr(obj, name)))

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_text(Path(path).read_text())


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(repr(float(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(text: str, like):
    if isinstance(like, bool):
        low = text.lower()
        if low not in ("true", "false", "1", "0", "yes", "no", "on", "off"):
            raise ValueError(f"not a boolean: {text!r}")
        return low in ("true", "1", "yes", "on")
    if isinstance(like, int):
        return int(text)
    if isinstance(like, float):
        return float(text)
    if isinstance(like, tuple):
        return tuple(float(x) for x in text.split(","))
    return text
