"""Closed-loop exploration episodes: sense, estimate, map, plan, act.

An episode is a pure function of (world, config, policy, seed, start); all
randomness flows through one seeded generator and every log line is
formatted deterministically.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import prediction
from . import world as world_mod
from .config import RunConfig
from .covariance import recover_marginals
from .geometry import (
    Point2,
    Pose2,
    between,
    compose,
    inverse_range_bearing,
    range_bearing_to,
    rot2,
    wrap_angle,
)
from .graph import (
    LANDMARK_OBS,
    LOOP_CLOSURE,
    ODOMETRY,
    PRIOR,
    Factor,
    FactorGraph,
    landmark_key,
    pose_key,
)
from .occupancy import OccupancyGrid, build_submap, clearance, export_greymap
from .pcm import LoopCandidate, pcm_filter
from .planning import (
    FRONTIER,
    Roadmap,
    box_mask,
    detect_frontiers,
    frontier_goals,
    plan_paths,
    revisit_goals,
)
from .policies import CONTINUE, REPLAN, BeliefSnapshot, replan_check, select_action
from .registration import RegistrationError, SearchWindow, global_init, icp
from .sensors import sense_landmarks, sense_structure
from .solver import SolverError, solve
from .virtual_map import (
    downsample_to_virtual,
    fold_observations,
    worst_case_prior_variance,
)

COMPLETE = "complete"
BUDGET = "budget"
FAILED = "failed"


def keyframe_due(delta: Pose2, slam_cfg) -> bool:
    """True when dead reckoning since the last keyframe crossed a threshold."""
    return (
        math.hypot(delta.x, delta.y) > slam_cfg.keyframe_translation
        or abs(delta.theta) > slam_cfg.keyframe_rotation
    )


def unicycle_step(pose: Pose2, target_xy, sim_cfg) -> Pose2:
    """Turn-then-drive advance toward a waypoint at fixed speed."""
    dx = target_xy[0] - pose.x
    dy = target_xy[1] - pose.y
    dist = math.hypot(dx, dy)
    heading = math.atan2(dy, dx)
    err = wrap_angle(heading - pose.theta)
    max_turn = sim_cfg.turn_rate * sim_cfg.dt
    if abs(err) > 0.15:
        turn = max(-max_turn, min(max_turn, err))
        return Pose2(pose.x, pose.y, pose.theta + turn)
    advance = min(sim_cfg.speed * sim_cfg.dt, dist)
    th = pose.theta + err
    return Pose2(pose.x + advance * math.cos(th), pose.y + advance * math.sin(th), th)


def step(pose: Pose2, waypoint, sim_cfg, odom_cfg, rng, bbox=None) -> tuple:
    """One simulator tick: new ground-truth pose plus a noisy odometry increment."""
    new_pose = unicycle_step(pose, waypoint, sim_cfg)
    if bbox is not None:
        xmin, ymin, xmax, ymax = bbox
        new_pose = Pose2(
            min(max(new_pose.x, xmin), xmax),
            min(max(new_pose.y, ymin), ymax),
            new_pose.theta,
        )
    inc = between(pose, new_pose)
    if odom_cfg.sigma_x > 0 or odom_cfg.sigma_y > 0 or odom_cfg.sigma_theta > 0:
        noise = rng.normal(0.0, [odom_cfg.sigma_x, odom_cfg.sigma_y, odom_cfg.sigma_theta])
        meas = Pose2(inc.x + noise[0], inc.y + noise[1], inc.theta + noise[2])
    else:
        meas = inc
    return new_pose, meas


def _fmt(v) -> str:
    return repr(float(v))


def _cov6(cov: np.ndarray) -> list:
    return [cov[i, j] for i in range(3) for j in range(i, 3)]


@dataclass
class StepRecord:
    index: int
    truth: Pose2
    est: Pose2
    cov: np.ndarray
    distance: float
    known_cells: int
    traj_sse: float
    n_poses: int
    map_sse: float
    n_map_points: int

    def to_json(self) -> dict:
        return {
            "type": "state",
            "k": self.index,
            "truth": [self.truth.x, self.truth.y, self.truth.theta],
            "est": [self.est.x, self.est.y, self.est.theta],
            "cov": _cov6(self.cov),
            "dist": self.distance,
            "known": self.known_cells,
            "traj_sse": self.traj_sse,
            "n_poses": self.n_poses,
            "map_sse": self.map_sse,
            "n_map": self.n_map_points,
        }


@dataclass
class EpisodeLog:
    header: dict
    steps: list = field(default_factory=list)
    decisions: list = field(default_factory=list)
    closures: list = field(default_factory=list)
    observations: list = field(default_factory=list)
    terminated: str = COMPLETE
    grid_bytes: bytes = b""

    def to_text(self) -> str:
        lines = [json.dumps({"type": "header", **self.header}, sort_keys=True)]
        events = []
        for s in self.steps:
            events.append((s.index, 0, json.dumps(_round_floats(s.to_json()), sort_keys=True)))
        for d in self.decisions:
            events.append((d["k"], 1, json.dumps(_round_floats({"type": "decision", **d}), sort_keys=True)))
        for c in self.closures:
            events.append((c["k"], 2, json.dumps(_round_floats({"type": "closure", **c}), sort_keys=True)))
        for o in self.observations:
            events.append((o["k"], 3, json.dumps(_round_floats({"type": "obs", **o}), sort_keys=True)))
        events.sort(key=lambda e: (e[0], e[1], e[2]))
        lines.extend(e[2] for e in events)
        lines.append(json.dumps({"type": "end", "terminated": self.terminated}, sort_keys=True))
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_text(text: str) -> "EpisodeLog":
        log = EpisodeLog(header={})
        for line in text.splitlines():
            rec = json.loads(line)
            kind = rec.pop("type")
            if kind == "header":
                log.header = rec
            elif kind == "state":
                log.steps.append(
                    StepRecord(
                        index=rec["k"],
                        truth=Pose2(*rec["truth"]),
                        est=Pose2(*rec["est"]),
                        cov=_uncov6(rec["cov"]),
                        distance=rec["dist"],
                        known_cells=rec["known"],
                        traj_sse=rec["traj_sse"],
                        n_poses=rec["n_poses"],
                        map_sse=rec["map_sse"],
                        n_map_points=rec["n_map"],
                    )
                )
            elif kind == "decision":
                log.decisions.append(rec)
            elif kind == "closure":
                log.closures.append(rec)
            elif kind == "obs":
                log.observations.append(rec)
            elif kind == "end":
                log.terminated = rec["terminated"]
        return log


def _round_floats(obj):
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    return obj


def _uncov6(vals):
    cov = np.zeros((3, 3))
    it = iter(vals)
    for i in range(3):
        for j in range(i, 3):
            cov[i, j] = cov[j, i] = next(it)
    return cov


class _Episode:
    def __init__(self, world, cfg: RunConfig, seed: int, start_index: int, budget: int):
        self.world = world
        self.cfg = cfg
        self.rng = np.random.default_rng(np.random.PCG64(seed))
        self.budget = budget or cfg.sim.max_keyframes
        self.truth = world.starts[start_index % len(world.starts)]
        self.mode = world.mode

        margin = cfg.sensor.max_range + 1.0
        xmin, ymin, xmax, ymax = world.bbox
        res = cfg.mapping.resolution
        origin = (xmin - margin, ymin - margin)
        nx = int(math.ceil((xmax - xmin + 2 * margin) / res))
        ny = int(math.ceil((ymax - ymin + 2 * margin) / res))
        self.grid = OccupancyGrid(origin, (ny, nx), res)
        self.box = box_mask(self.grid, world.bbox)
        self.total_box_cells = int(self.box.sum())

        if world.mode == world_mod.LANDMARK_MODE:
            cfg.mapping.opaque_hits = False
            # point landmarks are not collision hazards: never prune paths
            cfg.planner.inflate_cells = -1
        if cfg.planner.d_max <= 0:
            cfg.planner.d_max = world.perimeter
        self.prior_var = worst_case_prior_variance(
            cfg.sensor, cfg.odom, world.diagonal, cfg.sim.speed, cfg.sim.dt,
            scale=cfg.vmap.prior_scale,
        )

        self.graph = FactorGraph()
        self.k = 0
        self.graph.add_pose(0, self.truth)
        prior_cov = np.diag(
            [
                max(cfg.slam.prior_sigma_xy**2, cfg.slam.noise_floor),
                max(cfg.slam.prior_sigma_xy**2, cfg.slam.noise_floor),
                max(cfg.slam.prior_sigma_theta**2, cfg.slam.noise_floor),
            ]
        )
        self.graph.add_factor(Factor(PRIOR, ("x0",), self.truth, prior_cov))

        self.sol = None
        self.cur_cov = None
        self.submaps = {}
        self.kf_truth = {0: self.truth}
        self.kf_features = {}
        self.lm_obs = {}
        self.landmark_count = 0
        self.vmap = None
        self.roadmap = Roadmap(self.grid, world.bbox, cfg.planner.inflate_cells)
        self.clear = None
        self.distance = 0.0
        self.active = None
        self.wp_index = 0
        self.traveled_since_plan = 0.0
        self.spin_queue = []
        self.last_spin_k = -10
        self.nssm_queue = []
        self.inserted_closures = set()

        self.log = EpisodeLog(
            header={
                "world": world.name,
                "mode": world.mode,
                "policy": cfg.planner.policy,
                "seed": int(seed),
                "start": int(start_index),
            }
        )

    # ---- sensing and graph construction -------------------------------

    def _observe(self, key: str, init_est: Pose2):
        cfg = self.cfg
        floor = np.eye(2) * cfg.slam.noise_floor
        if self.mode == world_mod.LANDMARK_MODE:
            obs = sense_landmarks(self.world, self.truth, cfg.sensor, self.rng)
            pts = []
            for j, z in enumerate_measurements(obs, cfg.sensor):
                lkey = landmark_key(j)
                if lkey not in self.graph.landmarks:
                    p, _, _ = inverse_range_bearing(init_est, z)
                    self.graph.add_landmark(j, p)
                self.graph.add_factor(
                    Factor(LANDMARK_OBS, (key, lkey), z, cfg.sensor.noise_cov() + floor)
                )
                self.lm_obs.setdefault(j, []).append((key, z))
                self.log.observations.append({"k": self.k, "pose": key, "lm": j})
                pts.append([z.range * math.cos(z.bearing), z.range * math.sin(z.bearing)])
            features = np.array(pts, dtype=float).reshape(-1, 2)
        else:
            features = sense_structure(self.world, self.truth, cfg.sensor, self.rng)
        self.kf_features[self.k] = features
        sm = build_submap(features, cfg.sensor, cfg.mapping, anchor=key)
        self.submaps[key] = sm
        return sm

    def _detect_loop_closures(self, key: str, est: dict):
        """Scan-match the newest keyframe against old ones, vet with PCM."""
        cfg = self.cfg
        k = self.k
        if k <= cfg.planner.n_sep:
            return
        source = self.kf_features.get(k)
        if source is None or len(source) < 10:
            return
        cur = est[key]
        cov = self.cur_cov
        sigma_t = math.sqrt(max(cov[0, 0], cov[1, 1])) if cov is not None else 1.0
        sigma_r = math.sqrt(cov[2, 2]) if cov is not None else 0.2
        eligible = []
        for t in range(0, k - cfg.planner.n_sep):
            tkey = pose_key(t)
            d = math.hypot(est[tkey].x - cur.x, est[tkey].y - cur.y)
            if d < 1.2 * cfg.sensor.max_range:
                eligible.append((d, t))
        eligible.sort()
        for _, t in eligible[:2]:
            tkey = pose_key(t)
            target = self.kf_features.get(t)
            if target is None or len(target) < 10:
                continue
            rel0 = between(est[tkey], cur)
            window = SearchWindow(
                x_half=min(3.0 * sigma_t + 0.5, 6.0),
                y_half=min(3.0 * sigma_t + 0.5, 6.0),
                theta_half=min(3.0 * sigma_r + math.radians(5), math.radians(45)),
                center=rel0,
            )
            eps = max(2.0 * self.cfg.sensor.sigma_range, 0.2)
            init = global_init(source, target, window, eps=eps, f_min=0.45)
            if init is None:
                continue
            try:
                res = icp(source, target, init[0], max_corr_dist=1.0)
            except RegistrationError:
                continue
            if res.n_inliers < 0.45 * len(source):
                continue
            if res.mean_residual > 3.0 * max(cfg.sensor.sigma_range, 0.05):
                continue
            # scan-matcher covariances underestimate along-wall ambiguity
            floor = np.diag([0.03**2, 0.03**2, math.radians(0.6) ** 2])
            cand = LoopCandidate(
                source=k,
                target=t,
                transform=res.transform,
                covariance=res.covariance + floor,
                inliers=res.n_inliers,
            )
            self.nssm_queue.append(cand)
        self.nssm_queue = self.nssm_queue[-8:]
        poses = [est[pose_key(i)] for i in range(self.k + 1)]
        for cand in pcm_filter(self.nssm_queue, poses):
            tag = (cand.target, cand.source)
            if tag in self.inserted_closures:
                continue
            self.graph.add_factor(
                Factor(
                    LOOP_CLOSURE,
                    (pose_key(cand.target), pose_key(cand.source)),
                    cand.transform,
                    cand.covariance,
                )
            )
            self.inserted_closures.add(tag)
            self.log.closures.append({"k": self.k, "i": cand.target, "j": cand.source})

    # ---- estimation and mapping ----------------------------------------

    def _solve_and_map(self):
        cfg = self.cfg
        self.sol = solve(self.graph, cfg.slam.max_iters, cfg.slam.tol)
        est = self.sol.estimates
        key = pose_key(self.k)
        self.cur_cov = recover_marginals(self.sol, [key])[0]
        sm = self.submaps.get(key)
        if sm is not None and sm.applied is None:
            self.grid.apply_submap(sm, est[key])
        for skey, submap in self.submaps.items():
            if submap.applied is not None and skey in est:
                from .occupancy import update_submap_pose

                update_submap_pose(self.grid, submap, submap.pose, est[skey], cfg.mapping)
        self.roadmap.update(self.grid)
        self.vmap = downsample_to_virtual(
            self.grid, cfg.vmap.resolution, self.prior_var, previous=self.vmap
        )
        fold_observations(self.vmap, [(est[key], self.cur_cov)], cfg.sensor)

    def _metrics_record(self):
        est = self.sol.estimates
        truths = [self.kf_truth[i] for i in range(self.k + 1)]
        ests = [est[pose_key(i)] for i in range(self.k + 1)]
        traj_sse = sum(
            (e.x - t.x) ** 2 + (e.y - t.y) ** 2 for e, t in zip(ests, truths)
        )
        map_sse, n_map = self._map_error(est)
        key = pose_key(self.k)
        known = int((self.grid.known_mask() & self.box).sum())
        self.log.steps.append(
            StepRecord(
                index=self.k,
                truth=self.truth,
                est=est[key],
                cov=self.cur_cov,
                distance=self.distance,
                known_cells=known,
                traj_sse=traj_sse,
                n_poses=self.k + 1,
                map_sse=map_sse,
                n_map_points=n_map,
            )
        )

    def _map_error(self, est):
        if self.mode == world_mod.LANDMARK_MODE:
            sse, n = 0.0, 0
            for j, obs in self.lm_obs.items():
                pts = []
                for key, z in obs:
                    p, _, _ = inverse_range_bearing(est[key], z)
                    pts.append((p.x, p.y))
                mx = sum(p[0] for p in pts) / len(pts)
                my = sum(p[1] for p in pts) / len(pts)
                gt = self.world.landmarks[j]
                sse += (mx - gt.x) ** 2 + (my - gt.y) ** 2
                n += 1
            return sse, n
        sse, n = 0.0, 0
        segs = []
        for st in self.world.structures:
            pts = st.points
            for a, b in zip(pts[:-1], pts[1:]):
                segs.append((a, b))
        if not segs:
            return 0.0, 0
        a = np.array([s[0] for s in segs])
        b = np.array([s[1] for s in segs])
        ab = b - a
        denom = (ab**2).sum(axis=1)
        denom[denom == 0] = 1.0
        for k, feats in self.kf_features.items():
            if len(feats) == 0:
                continue
            pose = est[pose_key(k)]
            world_pts = feats @ rot2(pose.theta).T + pose.translation()
            ap = world_pts[:, None, :] - a[None, :, :]
            t = np.clip((ap * ab[None, :, :]).sum(axis=2) / denom[None, :], 0.0, 1.0)
            proj = a[None, :, :] + t[:, :, None] * ab[None, :, :]
            d2 = ((world_pts[:, None, :] - proj) ** 2).sum(axis=2).min(axis=1)
            sse += float(d2.sum())
            n += len(world_pts)
        return sse, n

    # ---- planning -------------------------------------------------------

    def _plan(self):
        cfg = self.cfg
        est = self.sol.estimates
        key = pose_key(self.k)
        self.clear = clearance(self.grid)
        frontiers = detect_frontiers(self.grid, self.world.bbox)
        if len(frontiers) == 0:
            return None, {"policy": cfg.planner.policy, "reason": "no_frontiers"}
        fgoals = frontier_goals(
            frontiers, self.clear, self.grid, cfg.planner.n_frontier_goals,
            cfg.planner.goal_separation,
        )
        occ = self.grid.occupied_mask() & self.box
        iy, ix = np.nonzero(occ)
        occupied = np.stack([ix, iy], axis=1)
        rgoals = revisit_goals(
            occupied, self.clear, self.grid, self.world.bbox,
            cfg.planner.n_revisit_goals,
            cfg.planner.revisit_radius_factor * cfg.sensor.max_range,
            cfg.planner.goal_separation,
            cfg.planner.kmeans_max,
            cfg.planner.kmeans_cells_per_cluster,
            cfg.planner.circle_step,
        )
        goals = fgoals + rgoals
        cur = est[key]
        paths = plan_paths(self.roadmap, (cur.x, cur.y), goals)
        if not any(g.kind == FRONTIER for g in paths):
            return None, {"policy": cfg.planner.policy, "reason": "no_reachable_frontier"}
        candidates = [paths[g] for g in goals if g in paths]
        for c in candidates:
            c.goal = self._with_heading_hint(c.goal)
        diag = dict(zip(self.sol.order, recover_marginals(self.sol, self.sol.order)))
        snap = BeliefSnapshot(
            sol=self.sol,
            current_key=key,
            current_pose=cur,
            diag=diag,
            vmap=self.vmap,
            grid=self.grid,
            landmarks={k: v for k, v in est.items() if k.startswith("l")},
            keyframe_poses={k: v for k, v in est.items() if k.startswith("x")},
            mode=(
                prediction.LANDMARK_MODE
                if self.mode == world_mod.LANDMARK_MODE
                else prediction.POSE_SLAM_MODE
            ),
        )
        chosen, decision = select_action(
            cfg.planner.policy, candidates, snap, cfg, self.distance
        )
        decision["k"] = self.k
        return chosen, decision

    def _with_heading_hint(self, goal):
        """Frontier goals look toward nearby unknown space on arrival."""
        if goal.kind != FRONTIER:
            return goal
        gx, gy = goal.position.x, goal.position.y
        ix, iy = self.grid.index_of(np.array([gx, gy]))
        r = 10
        x0, x1 = max(ix - r, 0), min(ix + r + 1, self.grid.nx)
        y0, y1 = max(iy - r, 0), min(iy + r + 1, self.grid.ny)
        window = self.grid.ticks[y0:y1, x0:x1]
        uy, ux = np.nonzero(window == 0)
        if len(ux) == 0:
            return goal
        cx = self.grid.origin[0] + (x0 + ux.mean() + 0.5) * self.grid.resolution
        cy = self.grid.origin[1] + (y0 + uy.mean() + 0.5) * self.grid.resolution
        from dataclasses import replace

        return replace(goal, heading_hint=math.atan2(cy - gy, cx - gx))

    # ---- main loop ------------------------------------------------------

    def run(self) -> EpisodeLog:
        cfg = self.cfg
        self._observe(pose_key(0), self.truth)
        self._solve_and_map()
        self._metrics_record()

        while True:
            if self.k >= self.budget:
                self.log.terminated = BUDGET
                break
            if self.active is None and not self.spin_queue:
                chosen, decision = self._plan()
                decision["k"] = self.k
                self.log.decisions.append(decision)
                if chosen is None:
                    self.log.terminated = COMPLETE
                    break
                self.active = chosen
                self.wp_index = 0
                self.traveled_since_plan = 0.0
                if chosen.length < cfg.sim.waypoint_tolerance and self.k - self.last_spin_k > 1:
                    # goal is already underfoot: full turn to sweep the sensor
                    t0 = self.truth.theta
                    self.spin_queue = [
                        wrap_angle(t0 + 2.0 * math.pi / 3.0),
                        wrap_angle(t0 + 4.0 * math.pi / 3.0),
                        t0,
                    ]
                    self.last_spin_k = self.k
                    self.active = None

            compound = Pose2(0.0, 0.0, 0.0)
            qc = np.zeros((3, 3))
            finished_path = False
            while True:
                target, spin = self._current_target()
                if target is None:
                    finished_path = True
                    break
                prev_truth = self.truth
                if spin:
                    self.truth = self._spin_step()
                    inc = between(prev_truth, self.truth)
                    meas = self._noisy(inc)
                else:
                    self.truth, meas = step(
                        self.truth, target, cfg.sim, cfg.odom, self.rng, self.world.bbox
                    )
                    inc = between(prev_truth, self.truth)
                self.distance += math.hypot(inc.x, inc.y)
                self.traveled_since_plan += math.hypot(inc.x, inc.y)
                compound, qc = self._compound(compound, qc, meas)
                self._advance_waypoint()
                if keyframe_due(compound, cfg.slam):
                    break
                if self._at_target(target, spin):
                    finished_path = True
                    break

            if not finished_path or math.hypot(compound.x, compound.y) > 0.25 or abs(compound.theta) > 0.05:
                self._keyframe(compound, qc)
            if self.k >= self.budget:
                self.log.terminated = BUDGET
                break
            if finished_path:
                if self.spin_queue and self._spin_done():
                    self.spin_queue.pop(0)
                if self.active is not None and self.wp_index >= len(self.active.waypoints):
                    self.active = None
            if self.active is not None:
                remaining = self.active.cells[min(self.wp_index, len(self.active.cells) - 1):]
                if replan_check(self.roadmap, remaining, self.traveled_since_plan,
                                cfg.planner.replan_distance) == REPLAN:
                    self.active = None

        self.log.grid_bytes = export_greymap(self.grid)
        return self.log

    # ---- motion helpers -------------------------------------------------

    def _noisy(self, inc: Pose2) -> Pose2:
        odom = self.cfg.odom
        if odom.sigma_x > 0 or odom.sigma_y > 0 or odom.sigma_theta > 0:
            n = self.rng.normal(0.0, [odom.sigma_x, odom.sigma_y, odom.sigma_theta])
            return Pose2(inc.x + n[0], inc.y + n[1], inc.theta + n[2])
        return inc

    def _spin_step(self) -> Pose2:
        d = wrap_angle(self.spin_queue[0] - self.truth.theta)
        max_turn = self.cfg.sim.turn_rate * self.cfg.sim.dt
        turn = max(-max_turn, min(max_turn, d)) if abs(d) > 1e-6 else max_turn
        return Pose2(self.truth.x, self.truth.y, self.truth.theta + turn)

    def _spin_done(self) -> bool:
        return abs(wrap_angle(self.spin_queue[0] - self.truth.theta)) < 0.05

    def _current_target(self):
        if self.spin_queue:
            if self._spin_done():
                return None, True
            return (self.truth.x, self.truth.y), True
        if self.active is None:
            return None, False
        wps = self.active.waypoints
        if self.wp_index >= len(wps):
            return None, False
        wp = wps[self.wp_index]
        return (wp.x, wp.y), False

    def _advance_waypoint(self):
        if self.active is None:
            return
        wps = self.active.waypoints
        lookahead = max(self.cfg.sim.waypoint_tolerance, 3 * self.grid.resolution)
        while self.wp_index < len(wps):
            wp = wps[self.wp_index]
            d = math.hypot(wp.x - self.truth.x, wp.y - self.truth.y)
            if d < lookahead and self.wp_index < len(wps) - 1:
                self.wp_index += 1
            elif d < self.cfg.sim.waypoint_tolerance:
                self.wp_index += 1
            else:
                break

    def _at_target(self, target, spin) -> bool:
        if spin:
            return self._spin_done()
        if self.active is None:
            return True
        return self.wp_index >= len(self.active.waypoints)

    def _compound(self, compound, qc, meas):
        from .covariance import odometry_step

        st = odometry_step(compound, meas, self.cfg.odom.noise_cov(), "c")
        qc = st.F @ qc @ st.F.T + st.Q
        return compose(compound, meas), qc

    def _keyframe(self, compound, qc):
        cfg = self.cfg
        est_prev = self.sol.estimates[pose_key(self.k)]
        self.k += 1
        key = pose_key(self.k)
        init = compose(est_prev, compound)
        self.graph.add_pose(self.k, init)
        noise = qc + np.eye(3) * cfg.slam.noise_floor
        self.graph.add_factor(
            Factor(ODOMETRY, (pose_key(self.k - 1), key), compound, noise)
        )
        self.kf_truth[self.k] = self.truth
        self._observe(key, init)
        if self.mode == world_mod.STRUCTURE_MODE:
            self._detect_loop_closures(key, self.sol.estimates | {key: init})
        self._solve_and_map()
        self._metrics_record()


def enumerate_measurements(obs, sensor_cfg):
    """Clamp measured values into the sensor limits (FOV soundness)."""
    from .geometry import RangeBearing

    half = sensor_cfg.aperture / 2.0
    for j, z in obs:
        r = min(max(z.range, max(sensor_cfg.min_range, 1e-6)), sensor_cfg.max_range)
        b = min(max(z.bearing, -half), half)
        yield j, RangeBearing(r, b)


def run_episode(world, cfg: RunConfig, seed: int, start_index: int = 0,
                budget: int = None) -> EpisodeLog:
    """Run one exploration episode to termination or budget exhaustion."""
    import copy

    ep = _Episode(world, copy.deepcopy(cfg), seed, start_index, budget)
    try:
        return ep.run()
    except SolverError as exc:
        ep.log.terminated = FAILED
        ep.log.header["error"] = str(exc)
        ep.log.grid_bytes = export_greymap(ep.grid)
        return ep.log


def config_fingerprint(world, cfg: RunConfig, seed: int, start_index: int) -> str:
    from .config import format_config

    text = "%s|%s|%d|%d" % (world.name, format_config(cfg), seed, start_index)
    return hashlib.sha256(text.encode()).hexdigest()[:16]
