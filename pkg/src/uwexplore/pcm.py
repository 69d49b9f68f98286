"""Loop-closure outlier rejection by pairwise consistency maximization.

Two closure measurements are consistent when the closure implied by one of
them plus the odometry chain agrees with the other in Mahalanobis distance.
The accepted set is the maximum clique of the pairwise-consistency graph,
found by exact Bron-Kerbosch enumeration (fine for the few dozen candidates
held in the vetting queue).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

from .geometry import Pose2, between, compose, wrap_angle

# Mahalanobis acceptance threshold: chi-square 0.95 quantile for 3 dof,
# expressed as a distance (sqrt of the quantile).
ETA_PCM = float(math.sqrt(chi2.ppf(0.95, 3)))


@dataclass
class LoopCandidate:
    source: int              # later keyframe index
    target: int              # earlier keyframe index
    transform: Pose2         # measured target -> source transform
    covariance: np.ndarray   # 3x3 from the scan matcher
    inliers: int = 0

    def __post_init__(self):
        if self.target >= self.source:
            raise ValueError("loop candidate target must precede its source")


def _pose_error(a: Pose2, b: Pose2) -> np.ndarray:
    d = between(a, b)
    return np.array([d.x, d.y, wrap_angle(d.theta)])


_J = np.array([[0.0, -1.0], [1.0, 0.0]])


def _compose_jacobian_middle(a: Pose2, t: Pose2, b: Pose2) -> np.ndarray:
    """d(a (+) t (+) b) / dt, additive-component convention."""
    c1 = compose(a, t)
    F = np.eye(3)
    F[:2, 2] = c1.rotation() @ (_J @ b.translation())
    G = np.eye(3)
    G[:2, :2] = a.rotation()
    return F @ G


def pair_consistent(ca: LoopCandidate, cb: LoopCandidate, poses: list, eta: float = ETA_PCM) -> bool:
    """Check one candidate pair against the trajectory estimate.

    One candidate's covariance is transported through the composition with
    the odometry chain, so rotation errors pick up the lever arm they induce
    on the predicted translation.
    """
    x_ij = between(poses[cb.target], poses[ca.target])
    x_lk = between(poses[ca.source], poses[cb.source])
    predicted = compose(compose(x_ij, ca.transform), x_lk)
    e = _pose_error(cb.transform, predicted)

    Rb = cb.transform.rotation()
    dpred = np.eye(3)
    dpred[:2, :2] = Rb.T
    Ja = dpred @ _compose_jacobian_middle(x_ij, ca.transform, x_lk)
    cov = Ja @ ca.covariance @ Ja.T + cb.covariance
    md = float(math.sqrt(e @ np.linalg.solve(cov, e)))
    return md <= eta


def _max_clique(adj: dict) -> list:
    """Largest clique via Bron-Kerbosch with pivoting; deterministic tie-break."""
    best = []

    def expand(r, p, x):
        nonlocal best
        if not p and not x:
            if len(r) > len(best) or (len(r) == len(best) and sorted(r) < sorted(best)):
                best = list(r)
            return
        if len(r) + len(p) < len(best):
            return
        pivot = max(sorted(p | x), key=lambda u: len(p & adj[u]))
        for v in sorted(p - adj[pivot]):
            expand(r + [v], p & adj[v], x & adj[v])
            p = p - {v}
            x = x | {v}

    expand([], set(adj), set())
    return best


def pcm_filter(candidates: list, poses: list, eta: float = ETA_PCM) -> list:
    """Return the maximum mutually-consistent subset of loop candidates.

    poses holds the current trajectory estimate indexed by keyframe.
    Singletons are allowed: one candidate is always accepted.
    """
    n = len(candidates)
    if n == 0:
        return []
    if n == 1:
        return [candidates[0]]
    adj = {i: set() for i in range(n)}
    for i in range(n):
        for j in range(i + 1, n):
            if pair_consistent(candidates[i], candidates[j], poses, eta):
                adj[i].add(j)
                adj[j].add(i)
    clique = _max_clique(adj)
    if not clique:
        clique = [0]
    return [candidates[i] for i in sorted(clique)]
