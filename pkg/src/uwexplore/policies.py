"""Utility evaluation and the four goal-selection policies.

All policies pick from the same goal set and roadmap paths; they differ only
in the score. Candidate evaluation reads immutable snapshots, and ties break
deterministically by (goal kind, goal index).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .covariance import CovarianceCache, odometry_step, whitened_rows, woodbury_update
from .geometry import Pose2, between
from .planning import FRONTIER, REVISIT, CandidatePath, resample_path_poses
from .prediction import (
    LANDMARK_MODE,
    POSE_SLAM_MODE,
    predict_measurements,
    raycast_visible,
)
from .virtual_map import estimate_virtual_covariances, log_det_sum


@dataclass
class BeliefSnapshot:
    """Read-only planning inputs captured after a solve."""

    sol: object
    current_key: str
    current_pose: Pose2
    diag: dict
    vmap: object
    grid: object
    landmarks: dict = field(default_factory=dict)
    keyframe_poses: dict = field(default_factory=dict)
    mode: str = LANDMARK_MODE
    visible_cache: dict = field(default_factory=dict)


def _hop_noise(prev: Pose2, nxt: Pose2, cfg) -> np.ndarray:
    """Compounded odometry noise for one planned hop (drive plus turn time)."""
    d = between(prev, nxt)
    n_drive = math.hypot(d.x, d.y) / max(cfg.sim.speed * cfg.sim.dt, 1e-9)
    n_turn = abs(d.theta) / max(cfg.sim.turn_rate * cfg.sim.dt, 1e-9)
    n = max(n_drive + n_turn, 1.0)
    q = cfg.odom.noise_cov() * n
    return q + np.eye(3) * cfg.slam.noise_floor


def propagate_candidate(candidate: CandidatePath, snap: BeliefSnapshot, cfg,
                        with_map_term: bool = True) -> dict:
    """Belief propagation along one candidate path.

    Returns the final-pose covariance, the per-cell virtual-landmark
    determinant sum (when requested), and the number of predicted closures.
    """
    poses = resample_path_poses(candidate, cfg.planner.plan_pose_spacing)
    start_idx = int(snap.current_key[1:])
    # skip a leading pose that coincides with the current one
    future = []
    prev = snap.current_pose
    for p in poses:
        if math.hypot(p.x - prev.x, p.y - prev.y) < 1e-9:
            continue
        future.append(p)
        prev = p
    trajectory = [("x%d" % (start_idx + 1 + i), p) for i, p in enumerate(future)]

    if snap.mode == LANDMARK_MODE:
        map_state = {"landmarks": snap.landmarks}
        extra = {}
    else:
        map_state = {"keyframes": snap.keyframe_poses, "grid": snap.grid}
        extra = {
            "overlap_min": cfg.planner.overlap_min,
            "n_sep": cfg.planner.n_sep,
            "closure_noise": np.diag(
                [
                    cfg.planner.closure_sigma_xy**2,
                    cfg.planner.closure_sigma_xy**2,
                    cfg.planner.closure_sigma_theta**2,
                ]
            ),
            "n_rays": cfg.planner.nbv_rays,
            "visible_cache": snap.visible_cache,
        }
    predicted = predict_measurements(trajectory, map_state, snap.mode, cfg.sensor, **extra)

    anchors = set()
    future_keys = {k for k, _ in trajectory}
    for pf in predicted:
        for key in pf.factor.keys:
            if key not in future_keys:
                anchors.add(key)
    cache = CovarianceCache.from_solution(
        snap.sol, anchors=sorted(anchors), last_pose_key=snap.current_key, diag=snap.diag
    )
    prev_pose = snap.current_pose
    for key, pose in trajectory:
        inc = between(prev_pose, pose)
        cache.append_pose(odometry_step(prev_pose, inc, _hop_noise(prev_pose, pose, cfg), key))
        prev_pose = pose

    if predicted:
        values = dict(snap.sol.estimates)
        values.update({k: p for k, p in trajectory})
        rows = whitened_rows([pf.factor for pf in predicted], values)
        cache = woodbury_update(cache, rows)

    final_key = trajectory[-1][0] if trajectory else snap.current_key
    final_cov = cache.diag[final_key]
    out = {
        "final_cov": final_cov,
        "n_predicted": len(predicted),
        "trajectory": trajectory,
    }
    if with_map_term:
        poses_with_cov = [(p, cache.diag[k]) for k, p in trajectory]
        fused = estimate_virtual_covariances(snap.vmap, poses_with_cov, cfg.sensor)
        out["map_logdet"] = sum(math.log(np.linalg.det(cov)) for _, cov in fused.values())
    return out


def distance_weight(d_traveled: float, cfg) -> float:
    d_max = cfg.planner.d_max
    return max(cfg.planner.alpha0 * (1.0 - d_traveled / d_max), cfg.planner.alpha_min)


def evaluate_em_utility(candidate: CandidatePath, snap: BeliefSnapshot, cfg,
                        d_traveled: float) -> float:
    """Negative log-determinants of the predicted final pose and all virtual
    landmarks, minus the distance-weighted path length."""
    prop = propagate_candidate(candidate, snap, cfg, with_map_term=True)
    pose_term = -math.log(np.linalg.det(prop["final_cov"]))
    map_term = -prop["map_logdet"]
    alpha = distance_weight(d_traveled, cfg)
    utility = pose_term + map_term - alpha * candidate.length
    candidate.terms.update(
        {
            "pose_logdet": -pose_term,
            "map_logdet": -map_term,
            "alpha": alpha,
            "length": candidate.length,
            "n_predicted": prop["n_predicted"],
        }
    )
    candidate.utility = utility
    return utility


def nbv_gain(candidate: CandidatePath, snap: BeliefSnapshot, cfg) -> float:
    """Discounted count of newly visible unknown cells along the path."""
    poses = resample_path_poses(candidate, cfg.planner.plan_pose_spacing)
    seen = np.zeros(0, dtype=np.int64)
    gain = 0.0
    dist = 0.0
    prev = snap.current_pose
    for pose in poses:
        dist += math.hypot(pose.x - prev.x, pose.y - prev.y)
        prev = pose
        vis = raycast_visible(snap.grid, pose, cfg.sensor, cfg.planner.nbv_rays, want="unknown")
        new = np.setdiff1d(vis, seen, assume_unique=True)
        seen = np.union1d(seen, new)
        gain += len(new) * math.exp(-cfg.planner.nbv_lambda * dist)
    candidate.terms["nbv_gain"] = gain
    return gain


def pose_uncertainty(cov: np.ndarray) -> float:
    return float(np.linalg.det(cov)) ** (1.0 / 3.0)


def _pick(candidates: list, score, maximize: bool = True):
    """Deterministic argmax in canonical order (frontier first, then index).

    A candidate whose evaluation fails (belief propagation on degenerate
    inputs) is marked invalid and skipped rather than aborting the decision.
    """
    from .covariance import CovarianceError

    ordered = sorted(
        candidates, key=lambda c: (0 if c.goal.kind == FRONTIER else 1, c.goal.index)
    )
    best = None
    best_s = None
    for c in ordered:
        try:
            s = score(c)
        except (CovarianceError, np.linalg.LinAlgError) as exc:
            c.terms["invalid"] = str(exc)
            continue
        c.terms["score"] = s
        if best is None or (s > best_s if maximize else s < best_s):
            best, best_s = c, s
    return best


def select_action(policy: str, candidates: list, snap: BeliefSnapshot, cfg,
                  d_traveled: float):
    """Apply one of NF / NBV / Heuristic / EM to the candidate paths.

    Returns (chosen CandidatePath or None, decision record dict).
    """
    decision = {"policy": policy, "d_traveled": d_traveled}
    if not candidates:
        return None, decision

    if policy == "NF":
        frontier = [c for c in candidates if c.goal.kind == FRONTIER]
        chosen = _pick(frontier, lambda c: c.length, maximize=False)
    elif policy == "NBV":
        chosen = _pick(candidates, lambda c: nbv_gain(c, snap, cfg))
    elif policy == "EM":
        chosen = _pick(candidates, lambda c: evaluate_em_utility(c, snap, cfg, d_traveled))
    elif policy == "Heuristic":
        unc = pose_uncertainty(snap.diag[snap.current_key])
        decision["pose_uncertainty"] = unc
        revisit = [c for c in candidates if c.goal.kind == REVISIT]
        if unc > cfg.planner.heuristic_threshold and revisit:
            base = pose_uncertainty(snap.diag[snap.current_key])
            reductions = {}
            gains = {}
            for c in revisit:
                prop = propagate_candidate(c, snap, cfg, with_map_term=False)
                reductions[id(c)] = base - pose_uncertainty(prop["final_cov"])
                gains[id(c)] = nbv_gain(c, snap, cfg)

            def norm(d):
                vals = list(d.values())
                lo, hi = min(vals), max(vals)
                if hi - lo < 1e-12:
                    return {k: 0.0 for k in d}
                return {k: (v - lo) / (hi - lo) for k, v in d.items()}

            nred, ngain = norm(reductions), norm(gains)
            chosen = _pick(
                revisit,
                lambda c: cfg.planner.heuristic_w1 * nred[id(c)]
                + cfg.planner.heuristic_w2 * ngain[id(c)],
            )
        else:
            chosen = _pick(candidates, lambda c: nbv_gain(c, snap, cfg))
    else:
        raise ValueError("unknown policy %r" % policy)

    decision["candidates"] = [
        {
            "kind": c.goal.kind,
            "index": c.goal.index,
            "x": c.goal.position.x,
            "y": c.goal.position.y,
            "length": c.length,
            "terms": {k: _num(v) for k, v in c.terms.items()},
        }
        for c in candidates
    ]
    if chosen is not None:
        decision["chosen"] = {"kind": chosen.goal.kind, "index": chosen.goal.index}
    return chosen, decision


def _num(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return int(v)
    return float(v)


CONTINUE = "continue"
REPLAN = "replan"


def replan_check(roadmap, remaining_cells: np.ndarray, traveled_since_plan: float,
                 replan_distance: float) -> str:
    """Replan when the active path is blocked or has been ridden long enough."""
    if traveled_since_plan >= replan_distance:
        return REPLAN
    if len(remaining_cells):
        blocked = roadmap.blocked[remaining_cells[:, 1], remaining_cells[:, 0]]
        if blocked.any():
            return REPLAN
    return CONTINUE
