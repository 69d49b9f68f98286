"""Coarse virtual-landmark map and split covariance intersection.

Every coarse cell that is not known to be free carries a hypothetical
landmark with a split belief: a correlated covariance part (shared error
sources such as the observing poses), an independent part (sensor noise),
and a large isotropic prior. Beliefs are fused with split covariance
intersection, which upper-bounds the true covariance without tracking
cross-correlations between observations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Pose2, inverse_range_bearing, range_bearing_to

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
OMEGA_LO = 1e-6
OMEGA_HI = 1.0 - 1e-6
ZERO_PART = 1e-12


# symmetric 2x2 matrices as (xx, xy, yy) triples for the hot fusion path

def _tri(m) -> tuple:
    m = np.asarray(m, dtype=float)
    return (m[0, 0], 0.5 * (m[0, 1] + m[1, 0]), m[1, 1])


def _mat(t) -> np.ndarray:
    return np.array([[t[0], t[1]], [t[1], t[2]]])


def _det(t) -> float:
    return t[0] * t[2] - t[1] * t[1]


def _inv(t) -> tuple:
    d = _det(t)
    return (t[2] / d, -t[1] / d, t[0] / d)


def _add(a, b) -> tuple:
    return (a[0] + b[0], a[1] + b[1], a[2] + b[2])


def _scale(t, s: float) -> tuple:
    return (t[0] * s, t[1] * s, t[2] * s)


def _is_zero(t) -> bool:
    return max(abs(t[0]), abs(t[1]), abs(t[2])) < ZERO_PART


@dataclass(frozen=True)
class SplitBelief:
    """Covariance split into correlated (p1) and independent (p2) parts."""

    p1: tuple
    p2: tuple

    @staticmethod
    def from_matrices(P1, P2) -> "SplitBelief":
        return SplitBelief(_tri(P1), _tri(P2))

    def total(self) -> np.ndarray:
        return _mat(_add(self.p1, self.p2))

    def correlated(self) -> np.ndarray:
        return _mat(self.p1)

    def independent(self) -> np.ndarray:
        return _mat(self.p2)


def _fused_cov(a: SplitBelief, b: SplitBelief, w: float):
    pa = _add(_scale(a.p1, 1.0 / w), a.p2)
    pb = _add(_scale(b.p1, 1.0 / (1.0 - w)), b.p2)
    ia, ib = _inv(pa), _inv(pb)
    return _inv(_add(ia, ib)), ia, ib


def _limit_info(p1, p2):
    # information kept by an estimate whose correlated part is fully discounted
    if _is_zero(p1):
        return _inv(p2)
    return (0.0, 0.0, 0.0)


def _split_from_gains(cov, ia, ib, a: SplitBelief, b: SplitBelief, w: float) -> SplitBelief:
    C = _mat(cov)
    K = C @ _mat(ia)
    L = C @ _mat(ib)
    if w >= 1.0:
        P1a = _mat(a.p1)
        P1b = np.zeros((2, 2))
    elif w <= 0.0:
        P1a = np.zeros((2, 2))
        P1b = _mat(b.p1)
    else:
        P1a = _mat(a.p1) / w
        P1b = _mat(b.p1) / (1.0 - w)
    P2 = K @ _mat(a.p2) @ K.T + L @ _mat(b.p2) @ L.T
    P1 = K @ P1a @ K.T + L @ P1b @ L.T
    return SplitBelief(_tri(P1), _tri(P2))


def fuse_split(a: SplitBelief, b: SplitBelief) -> tuple:
    """SCI fusion of two split beliefs; returns (fused belief, omega).

    omega minimizes the fused determinant. The omega -> 0 and omega -> 1
    limits (fully discounting one correlated part) are included as
    candidates, which makes fusion monotone: adding an observation never
    inflates the determinant.
    """

    def f(w):
        cov, _, _ = _fused_cov(a, b, w)
        return _det(cov)

    best_w, best_f = 0.5, f(0.5)

    lo, hi = OMEGA_LO, OMEGA_HI
    c = hi - GOLDEN * (hi - lo)
    d = lo + GOLDEN * (hi - lo)
    fc, fd = f(c), f(d)
    while hi - lo > 1e-6:
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - GOLDEN * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + GOLDEN * (hi - lo)
            fd = f(d)
    wg = 0.5 * (lo + hi)
    fg = f(wg)
    if fg < best_f - 1e-15 * (1.0 + abs(best_f)):
        best_w, best_f = wg, fg

    # exact endpoint limits
    ia1 = _inv(_add(a.p1, a.p2))
    ib_lim = _limit_info(b.p1, b.p2)
    info1 = _add(ia1, ib_lim)
    cov1 = _inv(info1)
    f1 = _det(cov1)
    ia_lim = _limit_info(a.p1, a.p2)
    ib0 = _inv(_add(b.p1, b.p2))
    info0 = _add(ia_lim, ib0)
    cov0 = _inv(info0)
    f0 = _det(cov0)

    tol = 1e-15 * (1.0 + abs(best_f))
    if f1 < best_f - tol:
        best_w, best_f = 1.0, f1
    if f0 < best_f - tol:
        best_w, best_f = 0.0, f0

    if best_w >= 1.0:
        belief = _split_from_gains(cov1, ia1, ib_lim, a, b, 1.0)
    elif best_w <= 0.0:
        belief = _split_from_gains(cov0, ia_lim, ib0, a, b, 0.0)
    else:
        cov, ia, ib = _fused_cov(a, b, best_w)
        belief = _split_from_gains(cov, ia, ib, a, b, best_w)
    return belief, best_w


def sci_fuse(a_parts, b_parts) -> tuple:
    """Array-facing SCI fusion: ((P1a, P2a), (P1b, P2b)) -> (P1, P2, omega)."""
    a = SplitBelief.from_matrices(*a_parts)
    b = SplitBelief.from_matrices(*b_parts)
    for t, part in ((a.p1, "P1a"), (a.p2, "P2a"), (b.p1, "P1b"), (b.p2, "P2b")):
        if t[0] < -1e-12 or t[2] < -1e-12 or _det(t) < -1e-12:
            raise ValueError("%s is not positive semidefinite" % part)
    if _det(_add(a.p1, a.p2)) <= 0 or _det(_add(b.p1, b.p2)) <= 0:
        raise ValueError("each input needs positive definite total covariance")
    fused, w = fuse_split(a, b)
    return fused.correlated(), fused.independent(), w


def observation_belief(pose: Pose2, pose_cov: np.ndarray, target_xy, meas_cov: np.ndarray) -> SplitBelief:
    """Split contribution of one maximum-likelihood observation of a point.

    Correlated part: pose uncertainty pushed through the inverse sensor
    model. Independent part: measurement noise pushed through the same.
    """
    z = range_bearing_to(pose, _as_point(target_xy))
    _, H, G = inverse_range_bearing(pose, z)
    P1 = H @ pose_cov @ H.T
    P2 = G @ meas_cov @ G.T
    return SplitBelief(_tri(P1), _tri(P2))


def _as_point(xy):
    from .geometry import Point2

    if isinstance(xy, Point2):
        return xy
    return Point2(float(xy[0]), float(xy[1]))


class VirtualMap:
    """Coarse grid of virtual landmarks with split beliefs.

    presence[i, j] is 1 when the underlying fine occupancy block could
    contain an obstacle (max fine occupancy >= 0.5, unknown counts).
    """

    def __init__(self, origin, shape, resolution: float, prior_var: float):
        self.origin = (float(origin[0]), float(origin[1]))
        self.resolution = float(resolution)
        self.ny, self.nx = int(shape[0]), int(shape[1])
        self.prior_var = float(prior_var)
        self.presence = np.zeros((self.ny, self.nx), dtype=bool)
        self.beliefs = {}

    def prior_belief(self) -> SplitBelief:
        return SplitBelief((self.prior_var, 0.0, self.prior_var), (0.0, 0.0, 0.0))

    def cell_center(self, ix: int, iy: int) -> np.ndarray:
        return np.array(
            [
                self.origin[0] + (ix + 0.5) * self.resolution,
                self.origin[1] + (iy + 0.5) * self.resolution,
            ]
        )

    def present_cells(self) -> list:
        iy, ix = np.nonzero(self.presence)
        return list(zip(ix.tolist(), iy.tolist()))

    def copy_beliefs(self) -> dict:
        return dict(self.beliefs)


def downsample_to_virtual(grid, factor_resolution: float, prior_var: float, previous: VirtualMap = None) -> VirtualMap:
    """Max-pool the fine grid into virtual-landmark presence.

    A coarse cell is present unless every fine cell below it is known free.
    Newly present cells start at the prior; persisting cells keep their
    belief from `previous`.
    """
    ratio = factor_resolution / grid.resolution
    if abs(ratio - round(ratio)) > 1e-9:
        raise ValueError("virtual resolution must be a multiple of the grid resolution")
    r = int(round(ratio))
    ny = grid.ny // r
    nx = grid.nx // r
    vm = VirtualMap(grid.origin, (ny, nx), factor_resolution, prior_var)
    blocks = grid.ticks[: ny * r, : nx * r].reshape(ny, r, nx, r)
    vm.presence = blocks.max(axis=(1, 3)) >= 0
    prior = vm.prior_belief()
    for (ix, iy) in vm.present_cells():
        if previous is not None and (ix, iy) in previous.beliefs:
            vm.beliefs[(ix, iy)] = previous.beliefs[(ix, iy)]
        else:
            vm.beliefs[(ix, iy)] = prior
    return vm


def visible_cells(vmap: VirtualMap, pose: Pose2, sensor_cfg) -> list:
    """Present cells whose centres fall inside the sensor field of view."""
    cells = vmap.present_cells()
    if not cells:
        return []
    centers = np.array([vmap.cell_center(ix, iy) for ix, iy in cells])
    dx = centers[:, 0] - pose.x
    dy = centers[:, 1] - pose.y
    rng = np.hypot(dx, dy)
    brg = np.arctan2(dy, dx) - pose.theta
    brg = (brg + math.pi) % (2 * math.pi) - math.pi
    ok = (
        (rng >= max(sensor_cfg.min_range, 1e-9))
        & (rng <= sensor_cfg.max_range)
        & (np.abs(brg) <= sensor_cfg.aperture / 2.0)
    )
    return [c for c, keep in zip(cells, ok) if keep]


def estimate_virtual_covariances(vmap: VirtualMap, poses_with_cov, sensor_cfg) -> dict:
    """Fold predicted observations into every visible virtual landmark.

    poses_with_cov: [(Pose2, 3x3 covariance)] in trajectory order. Returns
    {cell: (SplitBelief, 2x2 covariance)}; cells seen by no pose keep their
    stored belief.
    """
    meas_cov = np.diag(
        [max(sensor_cfg.sigma_range**2, 1e-12), max(sensor_cfg.sigma_bearing**2, 1e-12)]
    )
    beliefs = {c: b for c, b in vmap.beliefs.items()}
    for pose, cov in poses_with_cov:
        for cell in visible_cells(vmap, pose, sensor_cfg):
            obs = observation_belief(pose, cov, vmap.cell_center(*cell), meas_cov)
            beliefs[cell], _ = fuse_split(beliefs[cell], obs)
    return {c: (b, _mat(_add(b.p1, b.p2))) for c, b in beliefs.items()}


def fold_observations(vmap: VirtualMap, poses_with_cov, sensor_cfg):
    """Permanently fuse executed observations into the stored beliefs."""
    fused = estimate_virtual_covariances(vmap, poses_with_cov, sensor_cfg)
    for c, (belief, _) in fused.items():
        vmap.beliefs[c] = belief


def log_det_sum(beliefs: dict) -> float:
    total = 0.0
    for b in beliefs.values():
        total += math.log(_det(_add(b.p1, b.p2)))
    return total


def worst_case_prior_variance(sensor_cfg, odom_cfg, bbox_diag: float, speed: float, dt: float, scale: float = 1.5) -> float:
    """Prior variance for virtual landmarks.

    Sized from the covariance of a single max-range observation taken after
    dead-reckoning across the bounding-box diagonal, scaled up so that
    exploring always pays off.
    """
    from .covariance import odometry_step

    step_len = max(speed * dt, 1e-6)
    n = int(math.ceil(bbox_diag / step_len))
    q = np.diag([odom_cfg.sigma_x**2, odom_cfg.sigma_y**2, odom_cfg.sigma_theta**2])
    cov = np.zeros((3, 3))
    pose = Pose2(0.0, 0.0, 0.0)
    inc = Pose2(step_len, 0.0, 0.0)
    st = odometry_step(pose, inc, q, "t")
    for _ in range(n):
        cov = st.F @ cov @ st.F.T + st.Q
    meas_cov = np.diag([sensor_cfg.sigma_range**2, sensor_cfg.sigma_bearing**2])
    from .geometry import RangeBearing

    _, H, G = inverse_range_bearing(pose, RangeBearing(sensor_cfg.max_range, 0.0))
    P = H @ cov @ H.T + G @ meas_cov @ G.T
    return max(scale * float(np.linalg.eigvalsh(P).max()), 1e-2)
