"""Sensor and odometry configuration plus the simulated measurement models."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Point2, Pose2, RangeBearing, range_bearing_to, wrap_angle


@dataclass
class SensorConfig:
    rate: float = 5.0
    min_range: float = 0.0
    max_range: float = 30.0
    aperture: float = math.radians(130.0)
    sigma_range: float = 0.2
    sigma_bearing: float = 0.02
    beams: int = 128

    def __post_init__(self):
        if not (0 <= self.min_range < self.max_range):
            raise ValueError("need 0 <= min range < max range")
        if self.aperture > 2 * math.pi + 1e-12:
            raise ValueError("aperture cannot exceed a full circle")

    def noise_cov(self) -> np.ndarray:
        return np.diag([self.sigma_range**2, self.sigma_bearing**2])

    def in_fov(self, rng: float, brg: float) -> bool:
        return self.min_range <= rng <= self.max_range and abs(brg) <= self.aperture / 2


@dataclass
class OdomConfig:
    rate: float = 5.0
    sigma_x: float = 0.08
    sigma_y: float = 0.08
    sigma_theta: float = 0.003

    def __post_init__(self):
        if min(self.rate, self.sigma_x, self.sigma_y, self.sigma_theta) < 0:
            raise ValueError("odometry parameters must be non-negative")

    def noise_cov(self) -> np.ndarray:
        return np.diag([self.sigma_x**2, self.sigma_y**2, self.sigma_theta**2])


def sense_landmarks(world, pose: Pose2, cfg: SensorConfig, rng: np.random.Generator) -> list:
    """All landmarks in the field of view, with Gaussian (r, b) noise.

    Data association is known: returns [(landmark index, RangeBearing)].
    """
    out = []
    for j, lm in enumerate(world.landmarks):
        z = range_bearing_to(pose, lm)
        if cfg.in_fov(z.range, z.bearing):
            r = z.range + (rng.normal(0.0, cfg.sigma_range) if cfg.sigma_range > 0 else 0.0)
            b = z.bearing + (rng.normal(0.0, cfg.sigma_bearing) if cfg.sigma_bearing > 0 else 0.0)
            out.append((j, RangeBearing(max(r, 1e-6), b)))
    return out


def _ray_segment_intersection(origin, direction, p0, p1):
    """Distance along the ray to a segment, or inf."""
    vx, vy = p1[0] - p0[0], p1[1] - p0[1]
    dx, dy = direction
    denom = dx * vy - dy * vx
    if abs(denom) < 1e-12:
        return math.inf
    ox, oy = p0[0] - origin[0], p0[1] - origin[1]
    t = (ox * vy - oy * vx) / denom          # along the ray
    u = (ox * dy - oy * dx) / denom          # along the segment
    if t <= 1e-9 or u < 0.0 or u > 1.0:
        return math.inf
    return t


def cast_ray(world, origin, bearing_world: float, max_range: float):
    """First-hit range per structure, honoring pass-through polylines.

    Returns a sorted list of (range, structure index); opaque structures
    truncate everything behind their first hit, pass-through structures
    contribute every intersection.
    """
    direction = (math.cos(bearing_world), math.sin(bearing_world))
    hits = []
    for si, st in enumerate(world.structures):
        pts = st.points
        for k in range(len(pts) - 1):
            t = _ray_segment_intersection(origin, direction, pts[k], pts[k + 1])
            if t <= max_range:
                hits.append((t, si))
    hits.sort()
    if not hits:
        return []
    out = []
    blocked = math.inf
    for t, si in hits:
        if t > blocked:
            break
        out.append((t, si))
        if not world.structures[si].pass_through:
            blocked = min(blocked, t)
    return out


def sense_structure(world, pose: Pose2, cfg: SensorConfig, rng: np.random.Generator):
    """Beam-cast the structure polylines; returns sensor-frame feature points.

    Per beam the first hit is returned, plus any hits behind pass-through
    structures. Gaussian noise is added in (r, b).
    """
    half = cfg.aperture / 2.0
    bearings = (np.arange(cfg.beams) + 0.5) * (cfg.aperture / cfg.beams) - half
    points = []
    origin = (pose.x, pose.y)
    for b in bearings:
        for t, _ in cast_ray(world, origin, pose.theta + b, cfg.max_range):
            if t < cfg.min_range:
                continue
            r = t + (rng.normal(0.0, cfg.sigma_range) if cfg.sigma_range > 0 else 0.0)
            bb = b + (rng.normal(0.0, cfg.sigma_bearing) if cfg.sigma_bearing > 0 else 0.0)
            r = max(r, 1e-6)
            points.append((r * math.cos(bb), r * math.sin(bb)))
    return np.array(points, dtype=float).reshape(-1, 2)


def rasterize_polar_image(world, pose: Pose2, cfg: SensorConfig, rng: np.random.Generator,
                          n_ranges: int = 150, snr_db: float = 20.0):
    """Synthetic intensity image: exponential background plus hit pulses."""
    from .cfar import PolarImage

    range_bin = cfg.max_range / n_ranges
    bearing_step = cfg.aperture / cfg.beams
    intensities = rng.exponential(1.0, size=(n_ranges, cfg.beams))
    amp = 10.0 ** (snr_db / 10.0)
    half = cfg.aperture / 2.0
    origin = (pose.x, pose.y)
    hit_cells = []
    for j in range(cfg.beams):
        b = (j + 0.5) * bearing_step - half
        for t, _ in cast_ray(world, origin, pose.theta + b, cfg.max_range):
            i = int(t / range_bin)
            if 0 <= i < n_ranges:
                intensities[i, j] += amp
                hit_cells.append((i, j))
    img = PolarImage(
        intensities=intensities,
        range_bin=range_bin,
        bearing_spacing=bearing_step,
        bearing_start=-half + 0.5 * bearing_step,
    )
    return img, hit_cells
