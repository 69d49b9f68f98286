"""Maximum-likelihood measurement prediction along candidate trajectories."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Point2, Pose2, between, range_bearing_to
from .graph import LANDMARK_OBS, LOOP_CLOSURE, Factor

LANDMARK_MODE = "landmark"
POSE_SLAM_MODE = "pose_slam"


@dataclass
class PredictedFactor:
    factor: Factor
    future_key: str


def raycast_visible(grid, pose: Pose2, sensor_cfg, n_rays: int = 131, want: str = "occupied"):
    """Cells of the requested class visible from a pose, as flat grid indices.

    Rays march at half-cell steps and stop at the first occupied cell;
    `want` selects whether the first-hit occupied cells or the unknown
    cells passed on the way are collected.
    """
    half = sensor_cfg.aperture / 2.0
    bearings = pose.theta + np.linspace(-half, half, n_rays)
    step = grid.resolution * 0.5
    n_steps = int(sensor_cfg.max_range / step)
    rr = (np.arange(1, n_steps + 1) * step)[None, :]
    ca, sa = np.cos(bearings)[:, None], np.sin(bearings)[:, None]
    xs = pose.x + ca * rr
    ys = pose.y + sa * rr
    ix = np.floor((xs - grid.origin[0]) / grid.resolution).astype(np.int64)
    iy = np.floor((ys - grid.origin[1]) / grid.resolution).astype(np.int64)
    inb = (ix >= 0) & (ix < grid.nx) & (iy >= 0) & (iy < grid.ny)
    flat = np.where(inb, iy * grid.nx + ix, 0)
    ticks = grid.ticks.ravel()[flat]
    occ = inb & (ticks > 0)
    # index of the first occupied sample per ray (n_steps when none)
    first = np.where(occ.any(axis=1), occ.argmax(axis=1), n_steps)
    cols = np.arange(n_steps)[None, :]
    if want == "occupied":
        sel = occ & (cols <= first[:, None])
    elif want == "unknown":
        sel = inb & (ticks == 0) & (cols < first[:, None])
    else:
        raise ValueError("want must be 'occupied' or 'unknown'")
    if rr is not None and sensor_cfg.min_range > 0:
        sel &= rr >= sensor_cfg.min_range
    return np.unique(flat[sel])


def predict_landmark_measurements(trajectory, landmarks: dict, sensor_cfg) -> list:
    """One noiseless observation factor per known landmark in view.

    trajectory: [(future pose key, Pose2)]; landmarks: {key: Point2 estimate}.
    """
    noise = sensor_cfg.noise_cov() + np.eye(2) * 1e-12
    out = []
    for key, pose in trajectory:
        for lkey, lm in landmarks.items():
            z = range_bearing_to(pose, lm)
            if sensor_cfg.in_fov(z.range, z.bearing) and z.range > 1e-6:
                f = Factor(LANDMARK_OBS, (key, lkey), z, noise)
                out.append(PredictedFactor(factor=f, future_key=key))
    return out


def predict_pose_slam_closures(trajectory, keyframes: dict, grid, sensor_cfg,
                               overlap_min: int, n_sep: int, closure_noise,
                               n_rays: int = 131, visible_cache: dict = None) -> list:
    """Loop closures where a future pose re-observes enough mapped structure.

    keyframes: {key: Pose2 estimate} for past keyframes. A closure connects
    the future pose to the past keyframe with the largest overlap between
    predicted visible occupied-cell sets, when that overlap reaches
    overlap_min cells.
    """
    out = []
    past = {}
    for key, pose in keyframes.items():
        if visible_cache is not None and key in visible_cache:
            past[key] = visible_cache[key]
        else:
            past[key] = raycast_visible(grid, pose, sensor_cfg, n_rays, want="occupied")
            if visible_cache is not None:
                visible_cache[key] = past[key]
    ordered = sorted(past, key=lambda k: int(k[1:]))
    n_future_base = max((int(k[1:]) for k in ordered), default=-1) + 1
    for key, pose in trajectory:
        future_index = int(key[1:])
        vis = raycast_visible(grid, pose, sensor_cfg, n_rays, want="occupied")
        if len(vis) == 0:
            continue
        best_key, best_overlap = None, 0
        for pkey in ordered:
            if future_index - int(pkey[1:]) <= n_sep:
                continue
            ov = len(np.intersect1d(vis, past[pkey], assume_unique=True))
            if ov > best_overlap:
                best_key, best_overlap = pkey, ov
        if best_key is not None and best_overlap >= overlap_min:
            rel = between(keyframes[best_key], pose)
            f = Factor(LOOP_CLOSURE, (best_key, key), rel, closure_noise)
            out.append(PredictedFactor(factor=f, future_key=key))
    return out


def predict_measurements(trajectory, map_state, mode: str, sensor_cfg, **kw) -> list:
    """Dispatch on SLAM flavor; an empty prediction list is a valid result."""
    if mode == LANDMARK_MODE:
        return predict_landmark_measurements(trajectory, map_state["landmarks"], sensor_cfg)
    if mode == POSE_SLAM_MODE:
        return predict_pose_slam_closures(
            trajectory,
            map_state["keyframes"],
            map_state["grid"],
            sensor_cfg,
            overlap_min=kw.get("overlap_min", 20),
            n_sep=kw.get("n_sep", 10),
            closure_noise=kw["closure_noise"],
            n_rays=kw.get("n_rays", 131),
            visible_cache=kw.get("visible_cache"),
        )
    raise ValueError("unknown prediction mode %r" % mode)
