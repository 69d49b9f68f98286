"""Marginal covariance recovery and belief propagation over candidate actions.

Covariances never come from a dense inverse here: diagonal blocks and block
columns are pulled out of the solver's triangular factor, open-loop poses are
appended with the odometry Jacobian recursion, and predicted loop closures
are folded in with a low-rank Woodbury update whose inner inverse has the
dimension of the predicted residuals only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import ODOMETRY, Factor, whitener
from .geometry import Pose2, compose
from .solver import Solution


class CovarianceError(Exception):
    pass


def _unit_columns(sol: Solution, key: str) -> np.ndarray:
    off, d = sol.offsets[key]
    E = np.zeros((sol.dim, d))
    E[off:off + d, :] = np.eye(d)
    return E


def recover_marginals(sol: Solution, keys) -> list:
    """Diagonal blocks of the covariance for the requested variables."""
    blocks = []
    for key in keys:
        if key not in sol.offsets:
            raise CovarianceError("unknown variable %r" % key)
        off, d = sol.offsets[key]
        X = sol.solve_information(_unit_columns(sol, key))
        blocks.append(0.5 * (X[off:off + d, :] + X[off:off + d, :].T))
    return blocks


def recover_cross_column(sol: Solution, key: str) -> dict:
    """Block column of the covariance anchored at one variable.

    Returns {other_key: Sigma_{other,key}} for every variable in the graph,
    computed by a forward and a back substitution against the stored factor.
    """
    if key not in sol.offsets:
        raise CovarianceError("unknown variable %r" % key)
    X = sol.solve_information(_unit_columns(sol, key))
    out = {}
    for k in sol.order:
        off, d = sol.offsets[k]
        out[k] = X[off:off + d, :].copy()
    return out


@dataclass
class OdometryStep:
    """Linearized one-step motion: x_next = F x_prev (+) mapped noise Q."""

    key: str
    F: np.ndarray
    Q: np.ndarray


def odometry_step(prev_pose: Pose2, increment: Pose2, noise: np.ndarray, key: str) -> OdometryStep:
    """Build the open-loop step dual to an odometry factor.

    F and the mapped noise are derived from the factor Jacobians at the
    predicted (maximum likelihood) linearization so that the recursion
    reproduces the solved extended graph exactly.
    """
    next_pose = compose(prev_pose, increment)
    f = Factor(ODOMETRY, ("a", "b"), increment, np.eye(3))  # Jacobians only
    _, jac = f.residual_and_jacobians({"a": prev_pose, "b": next_pose})
    Ji, Jj = jac["a"], jac["b"]
    Jj_inv = np.linalg.inv(Jj)
    F = -Jj_inv @ Ji
    Q = Jj_inv @ np.asarray(noise, dtype=float) @ Jj_inv.T
    return OdometryStep(key=key, F=F, Q=Q)


def propagate_open_loop(cross_at_k: dict, diag_at_k: np.ndarray, steps) -> tuple:
    """Propagate cross and diagonal covariance blocks through an odometry chain.

    cross_at_k maps variable keys to Sigma_{i,k} blocks at the last solved
    pose k; diag_at_k is Sigma_{kk}. Returns (cross_per_step, diag_per_step),
    one entry per step, where loop-closure information is deliberately absent.
    """
    cross = {k: np.asarray(v, dtype=float).copy() for k, v in cross_at_k.items()}
    diag = np.asarray(diag_at_k, dtype=float).copy()
    cross_out, diag_out = [], []
    for st in steps:
        F, Q = st.F, st.Q
        if F.shape[1] != diag.shape[0]:
            raise CovarianceError("odometry Jacobian dimension mismatch")
        cross = {k: v @ F.T for k, v in cross.items()}
        diag = F @ diag @ F.T + Q
        cross_out.append({k: v.copy() for k, v in cross.items()})
        diag_out.append(diag.copy())
    return cross_out, diag_out


class CovarianceCache:
    """Diagonal blocks plus on-demand block columns over tracked variables.

    The tracked set covers every solved variable and any appended open-loop
    poses; columns are materialized for anchors that predicted measurements
    touch. Snapshots are read-only once built and safe to share.
    """

    def __init__(self):
        self.order = []
        self.offsets = {}
        self.dim = 0
        self.diag = {}
        self.cols = {}
        self._last_pose = None

    @classmethod
    def from_solution(cls, sol: Solution, anchors=(), last_pose_key=None, diag=None) -> "CovarianceCache":
        cache = cls()
        for key in sol.order:
            off, d = sol.offsets[key]
            cache.order.append(key)
            cache.offsets[key] = (off, d)
        cache.dim = sol.dim
        if diag is not None:
            cache.diag = {k: diag[k].copy() for k in sol.order}
        else:
            for key, blk in zip(sol.order, recover_marginals(sol, sol.order)):
                cache.diag[key] = blk
        want = list(dict.fromkeys(list(anchors) + ([last_pose_key] if last_pose_key else [])))
        for key in want:
            col = recover_cross_column(sol, key)
            cache.cols[key] = np.vstack([col[k] for k in cache.order])
        cache._last_pose = last_pose_key
        return cache

    def copy(self) -> "CovarianceCache":
        c = CovarianceCache()
        c.order = list(self.order)
        c.offsets = dict(self.offsets)
        c.dim = self.dim
        c.diag = {k: v.copy() for k, v in self.diag.items()}
        c.cols = {k: v.copy() for k, v in self.cols.items()}
        c._last_pose = self._last_pose
        return c

    def block_of_col(self, anchor: str, key: str) -> np.ndarray:
        off, d = self.offsets[key]
        return self.cols[anchor][off:off + d, :]

    def append_pose(self, step: OdometryStep):
        """Grow the tracked set by one open-loop pose (Eq.-style F recursion)."""
        prev = self._last_pose
        if prev is None or prev not in self.cols:
            raise CovarianceError("cache needs a column at the last pose to extend")
        F, Q = step.F, step.Q
        new_diag = F @ self.diag[prev] @ F.T + Q
        prev_col = self.cols[prev]
        new_col = prev_col @ F.T                      # Sigma_{i,new} for existing rows
        for a in list(self.cols):
            blk = self.block_of_col(a, prev)          # Sigma_{prev,a}
            self.cols[a] = np.vstack([self.cols[a], F @ blk])
        self.cols[step.key] = np.vstack([new_col, new_diag])
        self.order.append(step.key)
        self.offsets[step.key] = (self.dim, 3)
        self.dim += 3
        self.diag[step.key] = new_diag
        self._last_pose = step.key


@dataclass
class MeasurementRow:
    """One whitened predicted-measurement block row of the update Jacobian."""

    blocks: dict  # key -> (m, dim_key) whitened Jacobian block

    @property
    def dim(self) -> int:
        return next(iter(self.blocks.values())).shape[0]


def whitened_rows(factors, values) -> list:
    rows = []
    for f in factors:
        _, jac = f.whitened(values)
        rows.append(MeasurementRow(blocks=jac))
    return rows


def woodbury_update(cache: CovarianceCache, rows) -> CovarianceCache:
    """Fold loop-closure information into the cache without a large inverse.

    rows carry whitened Jacobian blocks; the inner matrix inverted here has
    the total predicted-residual dimension only. Returns a new cache with
    updated diagonal blocks and columns.
    """
    out = cache.copy()
    if not rows:
        return out
    for row in rows:
        for key in row.blocks:
            if key not in cache.cols:
                raise CovarianceError(
                    "cache is missing the block column for %r touched by the update" % key
                )
    m = sum(row.dim for row in rows)
    B = np.zeros((m, cache.dim))          # A_u Sigma
    r0 = 0
    for row in rows:
        for key, J in row.blocks.items():
            B[r0:r0 + row.dim, :] += J @ cache.cols[key].T
        r0 += row.dim
    S = np.eye(m)                          # I + A_u Sigma A_u^T
    r0 = 0
    for row in rows:
        for key, J in row.blocks.items():
            off, d = cache.offsets[key]
            S[:, r0:r0 + row.dim] += B[:, off:off + d] @ J.T
        r0 += row.dim
    try:
        K = np.linalg.solve(S, B)
    except np.linalg.LinAlgError:
        raise CovarianceError("update matrix (I + A Sigma A^T) is not invertible")
    for key in out.order:
        off, d = out.offsets[key]
        blk = out.diag[key] - B[:, off:off + d].T @ K[:, off:off + d]
        out.diag[key] = 0.5 * (blk + blk.T)
    for a in list(out.cols):
        off, d = out.offsets[a]
        out.cols[a] = out.cols[a] - K.T @ B[:, off:off + d]
    return out
