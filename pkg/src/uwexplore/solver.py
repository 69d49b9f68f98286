"""Batch Gauss-Newton solver exposing the triangular factor of the information matrix.

The normal equations are accumulated blockwise from noise-whitened factor
Jacobians, permuted with a fill-reducing (reverse Cuthill-McKee) ordering on
the variable-adjacency structure and factored as R^T R = P Lambda P^T. The
R factor is retained on the Solution so covariance columns can later be
recovered with two triangular solves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee

from .geometry import Point2, Pose2, compose, wrap_angle


class SolverError(Exception):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []


@dataclass
class Solution:
    estimates: dict
    order: list                 # variable keys, solver ordering
    offsets: dict               # key -> (offset, dim)
    R: sp.csr_matrix            # upper triangular, R^T R = Lambda permuted
    perm: np.ndarray            # permutation applied to scalar indices
    iperm: np.ndarray
    residual_norm: float
    residual_history: list
    iterations: int
    graph: object = field(repr=False, default=None)
    _r_dense: np.ndarray = field(repr=False, default=None)

    @property
    def dim(self) -> int:
        return int(self.perm.size)

    def _dense_factor(self) -> np.ndarray:
        if self._r_dense is None:
            self._r_dense = self.R.toarray()
        return self._r_dense

    def solve_information(self, rhs: np.ndarray) -> np.ndarray:
        """Solve Lambda X = rhs via forward/back substitution on the factor."""
        R = self._dense_factor()
        b = rhs[self.perm]
        y = sla.solve_triangular(R, b, trans="T", lower=False)
        x = sla.solve_triangular(R, y, lower=False)
        return x[self.iperm] if x.ndim == 1 else x[self.iperm, :]


def _layout(graph):
    order = graph.ordering()
    offsets = {}
    dim = 0
    for key in order:
        d = graph.variable_dim(key)
        offsets[key] = (dim, d)
        dim += d
    return order, offsets, dim


def _assemble_normal(graph, values, offsets, dim):
    """Dense Lambda = A^T A and rhs = A^T (-b) accumulated per factor."""
    lam = np.zeros((dim, dim))
    rhs = np.zeros(dim)
    sq = 0.0
    for f in graph.factors:
        r, jac = f.whitened(values)
        sq += float(r @ r)
        items = list(jac.items())
        for ka, Ja in items:
            oa, da = offsets[ka]
            rhs[oa:oa + da] -= Ja.T @ r
            for kb, Jb in items:
                ob, db = offsets[kb]
                lam[oa:oa + da, ob:ob + db] += Ja.T @ Jb
    return lam, rhs, math.sqrt(sq)


def _block_sparsity(graph, order, offsets, dim) -> sp.csr_matrix:
    rows, cols = [], []
    for key in order:
        off, d = offsets[key]
        for a in range(d):
            for b in range(d):
                rows.append(off + a)
                cols.append(off + b)
    for f in graph.factors:
        for ka in f.keys:
            oa, da = offsets[ka]
            for kb in f.keys:
                ob, db = offsets[kb]
                for a in range(da):
                    for b in range(db):
                        rows.append(oa + a)
                        cols.append(ob + b)
    data = np.ones(len(rows), dtype=np.int8)
    m = sp.csr_matrix((data, (rows, cols)), shape=(dim, dim))
    m.sum_duplicates()
    return m


def _retract(values, order, offsets, delta):
    out = {}
    for key in order:
        off, d = offsets[key]
        v = values[key]
        if d == 3:
            out[key] = Pose2(
                v.x + delta[off], v.y + delta[off + 1], wrap_angle(v.theta + delta[off + 2])
            )
        else:
            out[key] = Point2(v.x + delta[off], v.y + delta[off + 1])
    return out


def _diagnose_singular(lam_dense, order, offsets):
    w, V = np.linalg.eigh(lam_dense)
    v = np.abs(V[:, 0])
    idx = int(np.argmax(v))
    for key in order:
        off, d = offsets[key]
        if off <= idx < off + d:
            return key
    return order[0]


def solve(graph, max_iters: int = 20, tol: float = 1e-6) -> Solution:
    """Gauss-Newton until the update infinity-norm drops below tol.

    Raises SolverError on singular normal equations (naming an
    under-constrained variable) or when the residual norm grows five
    consecutive iterations.
    """
    graph.validate()
    order, offsets, dim = _layout(graph)

    values = graph.initial_values()
    history = []
    grow = 0
    iters = 0
    for iters in range(1, max_iters + 1):
        lam, rhs, rnorm = _assemble_normal(graph, values, offsets, dim)
        if history and rnorm > history[-1]:
            grow += 1
            if grow >= 5:
                raise SolverError(
                    "Gauss-Newton diverged (residual grew 5 consecutive iterations)",
                    history + [rnorm],
                )
        else:
            grow = 0
        history.append(rnorm)
        try:
            c, low = sla.cho_factor(lam)
        except np.linalg.LinAlgError:
            key = _diagnose_singular(lam, order, offsets)
            raise SolverError(
                "normal equations are singular; variable %r is under-constrained" % key
            )
        delta = sla.cho_solve((c, low), rhs)
        values = _retract(values, order, offsets, delta)
        if float(np.max(np.abs(delta))) < tol:
            break

    # final factorization with a fill-reducing ordering at the converged point
    lam, rhs, rnorm = _assemble_normal(graph, values, offsets, dim)
    history.append(rnorm)
    pattern = _block_sparsity(graph, order, offsets, dim)
    perm = np.asarray(reverse_cuthill_mckee(pattern, symmetric_mode=True))
    lam_p = lam[np.ix_(perm, perm)]
    try:
        L = np.linalg.cholesky(lam_p)
    except np.linalg.LinAlgError:
        key = _diagnose_singular(lam, order, offsets)
        raise SolverError(
            "normal equations are singular; variable %r is under-constrained" % key
        )
    iperm = np.empty_like(perm)
    iperm[perm] = np.arange(perm.size)
    return Solution(
        estimates=values,
        order=order,
        offsets=offsets,
        R=sp.csr_matrix(L.T),
        perm=perm,
        iperm=iperm,
        residual_norm=history[-1],
        residual_history=history,
        iterations=iters,
        graph=graph,
    )


def dense_information(graph, values=None) -> tuple:
    """Dense Lambda = A^T A at the given linearization (oracle helper)."""
    order, offsets, dim = _layout(graph)
    if values is None:
        values = graph.initial_values()
    lam, _, _ = _assemble_normal(graph, values, offsets, dim)
    return lam, order, offsets
