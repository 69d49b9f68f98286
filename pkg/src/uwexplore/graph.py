"""Factor-graph construction for 2D pose/landmark SLAM.

Variables are keyed by strings: "x<i>" for poses, "l<j>" for landmarks.
Factor kinds: prior, odometry, loop_closure, landmark_obs. Odometry and
loop closures share the relative-pose measurement model; they are kept
distinct because open-loop belief propagation treats them differently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    Gaussian,
    Point2,
    Pose2,
    RangeBearing,
    between,
    rot2,
    wrap_angle,
)

J2 = np.array([[0.0, -1.0], [1.0, 0.0]])

PRIOR = "prior"
ODOMETRY = "odometry"
LOOP_CLOSURE = "loop_closure"
LANDMARK_OBS = "landmark_obs"


def pose_key(i: int) -> str:
    return "x%d" % i


def landmark_key(j: int) -> str:
    return "l%d" % j


def is_pose_key(key: str) -> bool:
    return key.startswith("x")


def key_index(key: str) -> int:
    return int(key[1:])


def whitener(cov: np.ndarray) -> np.ndarray:
    """Inverse square root of a noise covariance (lower Cholesky inverse)."""
    L = np.linalg.cholesky(cov)
    return np.linalg.inv(L)


@dataclass
class Factor:
    kind: str
    keys: tuple
    measurement: object  # Pose2 or RangeBearing
    noise: np.ndarray    # covariance of the residual

    def __post_init__(self):
        self.noise = np.asarray(self.noise, dtype=float)
        Gaussian(np.zeros(self.noise.shape[0]), self.noise)
        if np.linalg.eigvalsh(self.noise).min() <= 0:
            raise ValueError("factor noise covariance must be positive definite")
        expected = {PRIOR: 1, ODOMETRY: 2, LOOP_CLOSURE: 2, LANDMARK_OBS: 2}
        if self.kind not in expected:
            raise ValueError("unknown factor kind %r" % self.kind)
        if len(self.keys) != expected[self.kind]:
            raise ValueError("%s factor takes %d keys" % (self.kind, expected[self.kind]))

    @property
    def dim(self) -> int:
        return 2 if self.kind == LANDMARK_OBS else 3

    def residual_and_jacobians(self, values: dict):
        """Unwhitened residual and Jacobian blocks per connected key."""
        if self.kind == PRIOR:
            x = values[self.keys[0]]
            m = self.measurement
            r = np.array([x.x - m.x, x.y - m.y, wrap_angle(x.theta - m.theta)])
            return r, {self.keys[0]: np.eye(3)}
        if self.kind in (ODOMETRY, LOOP_CLOSURE):
            xi = values[self.keys[0]]
            xj = values[self.keys[1]]
            m = self.measurement
            rel = between(xi, xj)
            Rm = rot2(m.theta)
            dt = rel.translation() - m.translation()
            r = np.concatenate([Rm.T @ dt, [wrap_angle(rel.theta - m.theta)]])
            Ri = rot2(xi.theta)
            dxy = xj.translation() - xi.translation()
            # d(rel.t)/d(t_i) = -Ri^T, d(rel.t)/d(theta_i) = -J Ri^T dxy
            Ji = np.zeros((3, 3))
            Ji[:2, :2] = -Rm.T @ Ri.T
            Ji[:2, 2] = -Rm.T @ (J2 @ (Ri.T @ dxy))
            Ji[2, 2] = -1.0
            Jj = np.zeros((3, 3))
            Jj[:2, :2] = Rm.T @ Ri.T
            Jj[2, 2] = 1.0
            return r, {self.keys[0]: Ji, self.keys[1]: Jj}
        # landmark_obs: residual of predicted (range, bearing) minus measured
        x = values[self.keys[0]]
        l = values[self.keys[1]]
        m = self.measurement
        dx, dy = l.x - x.x, l.y - x.y
        q = dx * dx + dy * dy
        rng = math.sqrt(q)
        if rng <= 0:
            raise ValueError("landmark coincides with pose; bearing undefined")
        brg = wrap_angle(math.atan2(dy, dx) - x.theta)
        r = np.array([rng - m.range, wrap_angle(brg - m.bearing)])
        Jx = np.array(
            [
                [-dx / rng, -dy / rng, 0.0],
                [dy / q, -dx / q, -1.0],
            ]
        )
        Jl = np.array(
            [
                [dx / rng, dy / rng],
                [-dy / q, dx / q],
            ]
        )
        return r, {self.keys[0]: Jx, self.keys[1]: Jl}

    def whitened(self, values: dict):
        """Residual and Jacobians scaled by the inverse noise square root."""
        r, jac = self.residual_and_jacobians(values)
        W = self._whitener()
        return W @ r, {k: W @ J for k, J in jac.items()}

    def _whitener(self) -> np.ndarray:
        W = getattr(self, "_w_cache", None)
        if W is None:
            W = whitener(self.noise)
            self._w_cache = W
        return W

    def _signature(self):
        if isinstance(self.measurement, Pose2):
            mz = (self.measurement.x, self.measurement.y, self.measurement.theta)
        else:
            mz = (self.measurement.range, self.measurement.bearing)
        return (self.kind, self.keys, mz)


class GraphError(Exception):
    pass


@dataclass
class FactorGraph:
    poses: dict = field(default_factory=dict)       # key -> Pose2 initial estimate
    landmarks: dict = field(default_factory=dict)   # key -> Point2 initial estimate
    factors: list = field(default_factory=list)

    def add_pose(self, i: int, initial: Pose2) -> str:
        key = pose_key(i)
        self.poses[key] = initial
        return key

    def add_landmark(self, j: int, initial: Point2) -> str:
        key = landmark_key(j)
        self.landmarks[key] = initial
        return key

    def add_factor(self, factor: Factor):
        for k in factor.keys:
            if k not in self.poses and k not in self.landmarks:
                raise GraphError("factor references unknown variable %r" % k)
        self.factors.append(factor)

    def variable_dim(self, key: str) -> int:
        return 3 if key in self.poses else 2

    def ordering(self) -> list:
        """Pose keys in index order, then landmark keys in index order."""
        xs = sorted(self.poses, key=key_index)
        ls = sorted(self.landmarks, key=key_index)
        return xs + ls

    def initial_values(self) -> dict:
        vals = dict(self.poses)
        vals.update(self.landmarks)
        return vals

    def validate(self):
        if not self.poses:
            raise GraphError("graph has no pose variables")
        if not any(f.kind == PRIOR for f in self.factors):
            raise GraphError("graph needs at least one prior factor")
        seen = set()
        for f in self.factors:
            sig = f._signature()
            if sig in seen:
                raise GraphError("duplicate factor %s %s" % (f.kind, f.keys))
            seen.add(sig)
        # connectivity over the variable/factor adjacency
        parent = {k: k for k in list(self.poses) + list(self.landmarks)}

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for f in self.factors:
            roots = [find(k) for k in f.keys]
            for r in roots[1:]:
                parent[r] = roots[0]
        roots = {find(k) for k in parent}
        if len(roots) > 1:
            raise GraphError("graph is disconnected (%d components)" % len(roots))


def _fmt(v: float) -> str:
    return repr(float(v))


def _tri(cov: np.ndarray) -> list:
    n = cov.shape[0]
    return [cov[i, j] for i in range(n) for j in range(i, n)]


def _untri(vals, n):
    cov = np.zeros((n, n))
    it = iter(vals)
    for i in range(n):
        for j in range(i, n):
            cov[i, j] = cov[j, i] = next(it)
    return cov


def dump_graph(graph: FactorGraph) -> str:
    """Line-oriented text serialization (variables, then one factor per line)."""
    lines = []
    for key in sorted(graph.poses, key=key_index):
        p = graph.poses[key]
        lines.append("pose %s %s %s %s" % (key, _fmt(p.x), _fmt(p.y), _fmt(p.theta)))
    for key in sorted(graph.landmarks, key=key_index):
        p = graph.landmarks[key]
        lines.append("landmark %s %s %s" % (key, _fmt(p.x), _fmt(p.y)))
    for f in graph.factors:
        if isinstance(f.measurement, Pose2):
            meas = [f.measurement.x, f.measurement.y, f.measurement.theta]
        else:
            meas = [f.measurement.range, f.measurement.bearing]
        parts = [f.kind] + list(f.keys) + [_fmt(v) for v in meas + _tri(f.noise)]
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def load_graph(text: str) -> FactorGraph:
    g = FactorGraph()
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tok = line.split()
        tag = tok[0]
        if tag == "pose":
            g.poses[tok[1]] = Pose2(float(tok[2]), float(tok[3]), float(tok[4]))
        elif tag == "landmark":
            g.landmarks[tok[1]] = Point2(float(tok[2]), float(tok[3]))
        elif tag == PRIOR:
            vals = [float(v) for v in tok[2:]]
            g.add_factor(Factor(PRIOR, (tok[1],), Pose2(*vals[:3]), _untri(vals[3:], 3)))
        elif tag in (ODOMETRY, LOOP_CLOSURE):
            vals = [float(v) for v in tok[3:]]
            g.add_factor(
                Factor(tag, (tok[1], tok[2]), Pose2(*vals[:3]), _untri(vals[3:], 3))
            )
        elif tag == LANDMARK_OBS:
            vals = [float(v) for v in tok[3:]]
            g.add_factor(
                Factor(
                    LANDMARK_OBS,
                    (tok[1], tok[2]),
                    RangeBearing(vals[0], vals[1]),
                    _untri(vals[2:], 2),
                )
            )
        else:
            raise GraphError("unknown record %r" % tag)
    return g
