"""SE(2) poses, 2D points, Gaussian beliefs and range-bearing measurements.

Everything here is immutable and pure; all angles are raw radians
normalized to (-pi, pi].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi

# Tolerance on the smallest eigenvalue when validating covariances.
# Accumulated propagation round-off must not hard-fail.
PSD_TOL = 1e-9


def wrap_angle(theta: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    t = math.fmod(theta, TWO_PI)
    if t > math.pi:
        t -= TWO_PI
    elif t <= -math.pi:
        t += TWO_PI
    return t


def rot2(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError("Point2 components must be finite")

    def array(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class Pose2:
    """Planar pose (x, y, theta) with theta in (-pi, pi]."""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    @staticmethod
    def identity() -> "Pose2":
        return Pose2(0.0, 0.0, 0.0)

    def rotation(self) -> np.ndarray:
        return rot2(self.theta)

    def translation(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    def matrix(self) -> np.ndarray:
        """3x3 homogeneous transform."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s, self.x], [s, c, self.y], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class RangeBearing:
    range: float
    bearing: float

    def __post_init__(self):
        object.__setattr__(self, "bearing", wrap_angle(self.bearing))
        if self.range < 0:
            raise ValueError("range must be non-negative")

    def array(self) -> np.ndarray:
        return np.array([self.range, self.bearing])


class Gaussian:
    """Mean vector plus symmetric PSD covariance."""

    def __init__(self, mean, cov):
        self.mean = np.asarray(mean, dtype=float)
        self.cov = np.asarray(cov, dtype=float)
        if self.cov.shape != (self.mean.size, self.mean.size):
            raise ValueError("covariance shape does not match mean")
        if not np.allclose(self.cov, self.cov.T, atol=1e-12):
            raise ValueError("covariance must be symmetric")
        if self.mean.size:
            w = np.linalg.eigvalsh(0.5 * (self.cov + self.cov.T))
            if w.min() < -PSD_TOL:
                raise ValueError(
                    "covariance not positive semidefinite (min eig %.3e)" % w.min()
                )

    def __repr__(self):
        return "Gaussian(mean=%s)" % (self.mean.tolist(),)


def compose(a: Pose2, b: Pose2) -> Pose2:
    """Group operation a (+) b."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2(
        a.x + c * b.x - s * b.y,
        a.y + s * b.x + c * b.y,
        a.theta + b.theta,
    )


def inverse(a: Pose2) -> Pose2:
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2(-(c * a.x + s * a.y), -(-s * a.x + c * a.y), -a.theta)


def between(a: Pose2, b: Pose2) -> Pose2:
    """Relative pose taking a to b, i.e. compose(a, between(a, b)) == b."""
    return compose(inverse(a), b)


def transform_point(x: Pose2, p: Point2) -> Point2:
    c, s = math.cos(x.theta), math.sin(x.theta)
    return Point2(x.x + c * p.x - s * p.y, x.y + s * p.x + c * p.y)


def transform_points(x: Pose2, pts: np.ndarray) -> np.ndarray:
    """Apply a pose to an (n, 2) array of points."""
    pts = np.asarray(pts, dtype=float)
    return pts @ rot2(x.theta).T + x.translation()


def range_bearing_to(x: Pose2, p: Point2) -> RangeBearing:
    """Forward sensor model: range and bearing of p seen from x."""
    dx, dy = p.x - x.x, p.y - x.y
    return RangeBearing(math.hypot(dx, dy), math.atan2(dy, dx) - x.theta)


def inverse_range_bearing(x: Pose2, z: RangeBearing):
    """Landmark position implied by a range-bearing measurement, with Jacobians.

    Returns (point, H, G) where H = d(point)/d(pose) (2x3) and
    G = d(point)/d(range, bearing) (2x2).
    """
    if z.range <= 0:
        raise ValueError("inverse sensor model requires positive range")
    a = x.theta + z.bearing
    ca, sa = math.cos(a), math.sin(a)
    p = Point2(x.x + z.range * ca, x.y + z.range * sa)
    H = np.array([[1.0, 0.0, -z.range * sa], [0.0, 1.0, z.range * ca]])
    G = np.array([[ca, -z.range * sa], [sa, z.range * ca]])
    return p, H, G
