"""Point-cloud registration: consensus-grid global initialization and 2D ICP."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import distance_transform_edt
from scipy.spatial import cKDTree

from .geometry import Pose2, rot2


@dataclass
class SearchWindow:
    """Discretized (x, y, theta) region scanned during global initialization."""

    x_half: float = 5.0
    y_half: float = 5.0
    theta_half: float = math.radians(30.0)
    xy_step: float = 0.5
    theta_step: float = math.radians(2.0)
    center: Pose2 = None

    def translations(self):
        nx = int(math.floor(self.x_half / self.xy_step + 1e-9))
        ny = int(math.floor(self.y_half / self.xy_step + 1e-9))
        xs = np.arange(-nx, nx + 1) * self.xy_step
        ys = np.arange(-ny, ny + 1) * self.xy_step
        return xs, ys

    def rotations(self):
        nt = int(math.floor(self.theta_half / self.theta_step + 1e-9))
        return np.arange(-nt, nt + 1) * self.theta_step


class RegistrationError(Exception):
    pass


def _target_membership(target: np.ndarray, eps: float):
    """Bitmap test for 'within eps of some target point', cell-center sampled."""
    res = eps / 4.0
    lo = target.min(axis=0) - 2.0 * eps
    hi = target.max(axis=0) + 2.0 * eps
    nx = int(np.ceil((hi[0] - lo[0]) / res)) + 1
    ny = int(np.ceil((hi[1] - lo[1]) / res)) + 1
    occ = np.zeros((ny, nx), dtype=bool)
    ix = ((target[:, 0] - lo[0]) / res).astype(int)
    iy = ((target[:, 1] - lo[1]) / res).astype(int)
    occ[iy, ix] = True
    dist = distance_transform_edt(~occ) * res
    mask = dist <= eps
    return mask, lo, res


def global_init(source: np.ndarray, target: np.ndarray, window: SearchWindow = None,
                eps: float = 0.4, f_min: float = 0.3):
    """Exhaustive consensus maximization over a pose grid.

    Returns (Pose2, inlier count) for the grid pose putting the most source
    points within eps of a target point, or None when the best inlier
    fraction stays below f_min (no overlap, candidate should be skipped).
    Ties break toward the first pose in scan order, so the result does not
    depend on point ordering.
    """
    source = np.asarray(source, dtype=float).reshape(-1, 2)
    target = np.asarray(target, dtype=float).reshape(-1, 2)
    if len(source) == 0 or len(target) == 0:
        raise RegistrationError("both point clouds must be non-empty")
    window = window or SearchWindow()
    center = window.center or Pose2.identity()

    mask, lo, res = _target_membership(target, eps)
    ny, nx = mask.shape
    flat = mask.ravel()

    xs, ys = window.translations()
    txy = np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1).reshape(-1, 2)
    txy = txy + center.translation()

    best = (-1, None)
    for dth in window.rotations():
        th = center.theta + dth
        rotated = source @ rot2(th).T
        pts = rotated[None, :, :] + txy[:, None, :]
        ix = ((pts[..., 0] - lo[0]) / res).astype(int)
        iy = ((pts[..., 1] - lo[1]) / res).astype(int)
        ok = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
        idx = np.where(ok, iy * nx + ix, 0)
        counts = np.where(ok, flat[idx], False).sum(axis=1)
        k = int(np.argmax(counts))
        if counts[k] > best[0]:
            best = (int(counts[k]), Pose2(txy[k, 0], txy[k, 1], th))
    count, pose = best
    if count < f_min * len(source):
        return None
    return pose, count


def _align(source: np.ndarray, target: np.ndarray):
    """Least-squares rigid transform mapping source onto target (Umeyama)."""
    mu_s = source.mean(axis=0)
    mu_t = target.mean(axis=0)
    H = (source - mu_s).T @ (target - mu_t)
    U, _, Vt = np.linalg.svd(H)
    S = np.diag([1.0, np.sign(np.linalg.det(Vt.T @ U.T))])
    R = Vt.T @ S @ U.T
    t = mu_t - R @ mu_s
    return Pose2(t[0], t[1], math.atan2(R[1, 0], R[0, 0]))


@dataclass
class IcpResult:
    transform: Pose2
    covariance: np.ndarray
    mean_residual: float
    iterations: int
    cost_history: list
    n_inliers: int


def icp(source: np.ndarray, target: np.ndarray, init: Pose2,
        max_iters: int = 50, tol: float = 1e-6, max_corr_dist: float = math.inf,
        min_inliers: int = 5) -> IcpResult:
    """Point-to-point ICP with nearest-neighbor association.

    Covariance is the Gauss-Newton Hessian inverse of the alignment cost
    scaled by the mean squared residual. Raises RegistrationError when
    fewer than min_inliers correspondences survive the distance gate.
    """
    source = np.asarray(source, dtype=float).reshape(-1, 2)
    target = np.asarray(target, dtype=float).reshape(-1, 2)
    if len(source) == 0 or len(target) == 0:
        raise RegistrationError("both point clouds must be non-empty")
    tree = cKDTree(target)
    pose = init
    cost_history = []
    matched = None
    for it in range(1, max_iters + 1):
        moved = source @ rot2(pose.theta).T + pose.translation()
        dists, idx = tree.query(moved)
        keep = dists <= max_corr_dist
        if int(keep.sum()) < min_inliers:
            raise RegistrationError(
                "too few inlier correspondences (%d < %d)" % (int(keep.sum()), min_inliers)
            )
        matched = (source[keep], target[idx[keep]], keep)
        cost_history.append(float(np.sum(dists[keep] ** 2)))
        delta = _align(moved[keep], target[idx[keep]])
        pose = Pose2(
            delta.x + math.cos(delta.theta) * pose.x - math.sin(delta.theta) * pose.y,
            delta.y + math.sin(delta.theta) * pose.x + math.cos(delta.theta) * pose.y,
            pose.theta + delta.theta,
        )
        if abs(delta.x) < tol and abs(delta.y) < tol and abs(delta.theta) < tol:
            break

    src_k, tgt_k, keep = matched
    moved = src_k @ rot2(pose.theta).T + pose.translation()
    resid = moved - tgt_k
    final_cost = float(np.sum(resid**2))
    cost_history.append(final_cost)
    m = len(src_k)
    # Hessian of the alignment cost wrt (x, y, theta)
    J_th = (src_k @ rot2(pose.theta).T) @ np.array([[0.0, 1.0], [-1.0, 0.0]])
    H = np.zeros((3, 3))
    H[0, 0] = H[1, 1] = m
    H[0, 2] = H[2, 0] = J_th[:, 0].sum()
    H[1, 2] = H[2, 1] = J_th[:, 1].sum()
    H[2, 2] = float(np.sum(J_th**2))
    dof = max(2 * m - 3, 1)
    sigma2 = final_cost / dof
    cov = sigma2 * np.linalg.inv(H)
    return IcpResult(
        transform=pose,
        covariance=cov,
        mean_residual=math.sqrt(final_cost / max(m, 1)),
        iterations=it,
        cost_history=cost_history,
        n_inliers=m,
    )
