"""Run configuration: defaults, a flat key-value file format, strict parsing.

Files hold `section.key = value` lines; `#` starts a comment. Unknown keys
are errors so typos cannot silently fall back to defaults.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

from .occupancy import MappingConfig
from .sensors import OdomConfig, SensorConfig


@dataclass
class SlamConfig:
    prior_sigma_xy: float = 0.05
    prior_sigma_theta: float = 0.02
    noise_floor: float = 1e-6           # keeps factor covariances invertible at zero noise
    max_iters: int = 20
    tol: float = 1e-6
    keyframe_translation: float = 4.0
    keyframe_rotation: float = math.radians(30.0)


@dataclass
class VirtualMapConfig:
    resolution: float = 2.0
    prior_scale: float = 1.5


@dataclass
class PlannerConfig:
    policy: str = "EM"                  # NF | NBV | Heuristic | EM
    n_frontier_goals: int = 5
    n_revisit_goals: int = 5
    goal_separation: float = 4.0
    revisit_radius_factor: float = 0.5  # times sensor max range
    alpha0: float = 1.0
    alpha_min: float = 0.05
    d_max: float = 0.0                  # 0 -> bounding-box perimeter
    nbv_lambda: float = 0.05
    heuristic_threshold: float = 0.3
    heuristic_w1: float = 0.5
    heuristic_w2: float = 0.5
    replan_distance: float = 8.0
    plan_pose_spacing: float = 4.0
    overlap_min: int = 20
    n_sep: int = 10
    kmeans_max: int = 8
    kmeans_cells_per_cluster: int = 200
    circle_step: float = math.radians(1.0)
    inflate_cells: int = 1
    nbv_rays: int = 131
    closure_sigma_xy: float = 0.1       # predicted/pose-slam closure noise
    closure_sigma_theta: float = 0.02

    def __post_init__(self):
        if self.policy not in ("NF", "NBV", "Heuristic", "EM"):
            raise ValueError("unknown policy %r" % self.policy)


@dataclass
class SimConfig:
    speed: float = 0.5
    dt: float = 0.2
    turn_rate: float = 0.6
    waypoint_tolerance: float = 0.3
    max_keyframes: int = 400


@dataclass
class RunConfig:
    sensor: SensorConfig = field(default_factory=SensorConfig)
    odom: OdomConfig = field(default_factory=OdomConfig)
    mapping: MappingConfig = field(default_factory=MappingConfig)
    slam: SlamConfig = field(default_factory=SlamConfig)
    vmap: VirtualMapConfig = field(default_factory=VirtualMapConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    sim: SimConfig = field(default_factory=SimConfig)


_SECTIONS = {
    "sensor": SensorConfig,
    "odom": OdomConfig,
    "mapping": MappingConfig,
    "slam": SlamConfig,
    "vmap": VirtualMapConfig,
    "planner": PlannerConfig,
    "sim": SimConfig,
}


class ConfigError(Exception):
    pass


def _coerce(current, raw: str):
    if isinstance(current, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError("expected boolean, got %r" % raw)
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    return raw


def apply_overrides(cfg: RunConfig, pairs: dict) -> RunConfig:
    for dotted, raw in pairs.items():
        if "." not in dotted:
            raise ConfigError("keys are section.name, got %r" % dotted)
        section, name = dotted.split(".", 1)
        if section not in _SECTIONS:
            raise ConfigError("unknown config section %r" % section)
        target = getattr(cfg, section)
        if not any(f.name == name for f in fields(target)):
            raise ConfigError("unknown key %r in section %r" % (name, section))
        setattr(target, name, _coerce(getattr(target, name), str(raw)))
    # re-run dataclass validation
    for section in _SECTIONS:
        obj = getattr(cfg, section)
        if hasattr(obj, "__post_init__"):
            obj.__post_init__()
    return cfg


def parse_config(text: str) -> RunConfig:
    cfg = RunConfig()
    pairs = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("line %d: expected key = value" % lineno)
        key, val = (part.strip() for part in line.split("=", 1))
        if key in pairs:
            raise ConfigError("line %d: duplicate key %r" % (lineno, key))
        pairs[key] = val
    return apply_overrides(cfg, pairs)


def load_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def format_config(cfg: RunConfig) -> str:
    lines = []
    for section, _ in _SECTIONS.items():
        obj = getattr(cfg, section)
        for f in fields(obj):
            v = getattr(obj, f.name)
            lines.append("%s.%s = %s" % (section, f.name, v if isinstance(v, str) else repr(v)))
    return "\n".join(lines) + "\n"
