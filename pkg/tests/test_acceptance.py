"""Acceptance suite: one test per release criterion, with a printed verdict line.

Run with `pytest tests/test_acceptance.py -v -s`. The policy-ordering
criterion runs a full multi-seed benchmark and dominates the runtime; all
other criteria finish in a few minutes.
"""

import math
import os
import time

import numpy as np
import pytest

from helpers import block, dense_covariance, random_graph
from uwexplore.covariance import (
    CovarianceCache,
    odometry_step,
    propagate_open_loop,
    recover_cross_column,
    recover_marginals,
    whitened_rows,
    woodbury_update,
)
from uwexplore.geometry import Point2, Pose2, between, compose, rot2
from uwexplore.graph import LOOP_CLOSURE, ODOMETRY, Factor
from uwexplore.solver import solve

VERDICTS = []


def verdict(name: str, ok: bool, detail: str = ""):
    line = "[%s] %s%s" % ("PASS" if ok else "FAIL", name, (": " + detail) if detail else "")
    VERDICTS.append(line)
    print("\n" + line)
    return ok


# --------------------------------------------------------------------------
# covariance recovery against dense information-matrix inversion


def test_criterion_covariance_oracle_suite():
    rng = np.random.default_rng(2024)
    t0 = time.time()
    worst = 0.0
    n_graphs = 200
    for trial in range(n_graphs):
        n_poses = int(rng.integers(2, 51))
        n_lms = int(rng.integers(0, 21))
        n_clo = int(rng.integers(0, 11))
        g, truth, _ = random_graph(
            rng, n_poses=n_poses, n_landmarks=n_lms, n_closures=n_clo, meas_noise=0.01
        )
        sol = solve(g)
        cov, order, offsets = dense_covariance(g, sol.estimates)

        margs = recover_marginals(sol, order)
        for key, m in zip(order, margs):
            worst = max(worst, float(np.max(np.abs(m - block(cov, offsets, key, key)))))

        last = "x%d" % (n_poses - 1)
        col = recover_cross_column(sol, last)
        for key in order:
            worst = max(worst, float(np.max(np.abs(col[key] - block(cov, offsets, key, last)))))

        # open-loop extension vs a dense solve of the extended graph
        incs = [Pose2(1.0, 0.1, 0.2), Pose2(0.8, -0.05, -0.15), Pose2(1.1, 0.0, 0.1)]
        q = np.diag([0.02, 0.015, 0.004])
        steps = []
        pose = sol.estimates[last]
        for t, inc in enumerate(incs, start=1):
            steps.append(odometry_step(pose, inc, q, "x%d" % (n_poses - 1 + t)))
            pose = compose(pose, inc)
        cross, diags = propagate_open_loop(col, col[last], steps)
        g_ext = g
        pose = sol.estimates[last]
        for k2, v in sol.estimates.items():
            if k2.startswith("x"):
                g_ext.poses[k2] = v
            else:
                g_ext.landmarks[k2] = v
        for t, inc in enumerate(incs, start=1):
            pose = compose(pose, inc)
            g_ext.poses["x%d" % (n_poses - 1 + t)] = pose
            g_ext.add_factor(
                Factor(ODOMETRY, ("x%d" % (n_poses - 2 + t), "x%d" % (n_poses - 1 + t)), inc, q)
            )
        from uwexplore.solver import dense_information

        lam2, order2, offsets2 = dense_information(g_ext, g_ext.initial_values())
        cov2 = np.linalg.inv(lam2)
        for t in range(len(incs)):
            key = "x%d" % (n_poses + t)
            worst = max(worst, float(np.max(np.abs(diags[t] - block(cov2, offsets2, key, key)))))
            for k2 in col:
                worst = max(
                    worst, float(np.max(np.abs(cross[t][k2] - block(cov2, offsets2, k2, key))))
                )

        # low-rank update vs dense augmented-information inverse
        if n_poses >= 4:
            a = int(rng.integers(0, n_poses - 2))
            b = int(rng.integers(a + 1, n_poses))
            rel = between(sol.estimates["x%d" % a], sol.estimates["x%d" % b])
            clo = Factor(
                LOOP_CLOSURE, ("x%d" % a, "x%d" % b), rel, np.diag([0.03, 0.03, 0.008])
            )
            cache = CovarianceCache.from_solution(
                sol, anchors=["x%d" % a, "x%d" % b], last_pose_key=last
            )
            out = woodbury_update(cache, whitened_rows([clo], sol.estimates))
            # augment the extended information matrix with the closure blocks
            lam3 = lam2.copy()
            _, jac = clo.whitened(sol.estimates)
            for ka, Ja in jac.items():
                oa, da = offsets2[ka]
                for kb, Jb in jac.items():
                    ob, db = offsets2[kb]
                    lam3[oa:oa + da, ob:ob + db] += Ja.T @ Jb
            cov3 = np.linalg.inv(lam3)
            for key in order:
                worst = max(
                    worst, float(np.max(np.abs(out.diag[key] - block(cov3, offsets2, key, key))))
                )
    elapsed = time.time() - t0
    ok = worst < 1e-8 and elapsed < 60.0
    assert verdict(
        "covariance oracle suite",
        ok,
        "%d graphs, worst block error %.2e, %.1f s" % (n_graphs, worst, elapsed),
    )


def test_criterion_sci_consistency():
    from uwexplore.graph import LANDMARK_OBS, PRIOR, FactorGraph
    from uwexplore.geometry import range_bearing_to
    from uwexplore.virtual_map import SplitBelief, fuse_split, observation_belief, sci_fuse

    rng = np.random.default_rng(7)
    meas_cov = np.diag([0.04, 0.01])
    min_eig = math.inf
    for _ in range(500):
        poses = [Pose2(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)) for _ in range(2)]
        pose_covs = []
        for _ in poses:
            A = rng.normal(size=(3, 3)) * 0.2
            pose_covs.append(A @ A.T + 0.02 * np.eye(3))
        lm = Point2(rng.uniform(3, 8), rng.uniform(-3, 3))
        g = FactorGraph()
        for i, (p, c) in enumerate(zip(poses, pose_covs)):
            g.add_pose(i, p)
            g.add_factor(Factor(PRIOR, ("x%d" % i,), p, c))
        g.add_landmark(0, lm)
        for i, p in enumerate(poses):
            g.add_factor(
                Factor(LANDMARK_OBS, ("x%d" % i, "l0"), range_bearing_to(p, lm), meas_cov)
            )
        sol = solve(g)
        cov, order, offsets = dense_covariance(g, sol.estimates)
        joint = block(cov, offsets, "l0", "l0")
        belief = SplitBelief((100.0, 0.0, 100.0), (0.0, 0.0, 0.0))
        for p, c in zip(poses, pose_covs):
            belief, _ = fuse_split(belief, observation_belief(p, c, lm, meas_cov))
        w = np.linalg.eigvalsh(belief.total() - joint)
        min_eig = min(min_eig, float(w.min()))

    q1, q2, w = sci_fuse((np.eye(2), np.eye(2)), (np.eye(2), np.eye(2)))
    scalar_ok = abs((q1 + q2)[0, 0] - 1.5) < 1e-6 and abs(w - 0.5) < 1e-6
    ok = min_eig >= -1e-9 and scalar_ok
    assert verdict(
        "SCI consistency",
        ok,
        "500 problems, min eigenvalue %.2e; scalar fuse=%.6f at omega=%.6f"
        % (min_eig, (q1 + q2)[0, 0], w),
    )


def test_criterion_fischer_bound():
    rng = np.random.default_rng(55)
    min_slack = math.inf
    n = 0
    for _ in range(60):
        g, _, _ = random_graph(
            rng,
            n_poses=int(rng.integers(3, 20)),
            n_landmarks=int(rng.integers(1, 10)),
            n_closures=int(rng.integers(0, 4)),
            meas_noise=0.01,
        )
        sol = solve(g)
        cov, order, offsets = dense_covariance(g, sol.estimates)
        lm_keys = [k for k in order if k.startswith("l")]
        if not lm_keys:
            continue
        pose_dim = sum(offsets[k][1] for k in order if k.startswith("x"))
        sign, logdet_full = np.linalg.slogdet(cov)
        assert sign > 0
        pose_block = cov[:pose_dim, :pose_dim]
        _, logdet_pose = np.linalg.slogdet(pose_block)
        bound = logdet_pose
        for k in lm_keys:
            bound += math.log(np.linalg.det(block(cov, offsets, k, k)))
        min_slack = min(min_slack, bound - logdet_full)
        n += 1
    ok = min_slack > 0
    assert verdict(
        "joint covariance log-det bound", ok, "%d graphs, min slack %.3e" % (n, min_slack)
    )


# --------------------------------------------------------------------------
# CFAR calibration


def test_criterion_cfar_tau_closed_form():
    from uwexplore.cfar import threshold_scale

    tau = threshold_scale(1, 0.1)
    ok = abs(tau - 8.0) < 1e-6
    assert verdict("CFAR tau closed form (N=1, Pfa=0.1)", ok, "tau = %.9f" % tau)


@pytest.mark.xfail(
    strict=True,
    reason="the published false-alarm relation underestimates the exact "
    "smallest-of rate by a factor of two; calibrating with it yields an "
    "empirical rate of 2x nominal (see the decisions ledger)",
)
def test_criterion_cfar_monte_carlo():
    from uwexplore.cfar import PolarImage, soca_cfar

    rng = np.random.default_rng(99)
    rates = {}
    for pfa in (1e-2, 1e-3):
        img = PolarImage(rng.exponential(1.0, size=(1_000_000 // 64 + 17, 64)), 0.1, 0.01)
        tested = (img.n_ranges - 16) * img.n_beams
        rates[pfa] = len(soca_cfar(img, 8, pfa)) / tested
    ok = all(0.5 * p <= rates[p] <= 1.5 * p for p in rates)
    verdict(
        "CFAR Monte Carlo false-alarm rate",
        ok,
        "empirical %s vs nominal {1e-2, 1e-3}" % ({k: round(v, 5) for k, v in rates.items()}),
    )
    assert ok


def test_criterion_cfar_monte_carlo_exact_rate():
    # supporting evidence: the detector itself is correct; with the exact
    # order-statistics calibration the empirical rate falls in the window
    from uwexplore.cfar import PolarImage, soca_cfar

    rng = np.random.default_rng(99)
    rates = {}
    for pfa in (1e-2, 1e-3):
        img = PolarImage(rng.exponential(1.0, size=(1_000_000 // 64 + 17, 64)), 0.1, 0.01)
        tested = (img.n_ranges - 16) * img.n_beams
        rates[pfa] = len(soca_cfar(img, 8, pfa, corrected=True)) / tested
    ok = all(0.5 * p <= rates[p] <= 1.5 * p for p in rates)
    assert verdict(
        "CFAR Monte Carlo with exact-rate calibration",
        ok,
        "empirical %s" % ({k: round(v, 5) for k, v in rates.items()}),
    )


# --------------------------------------------------------------------------
# PCM outlier rejection


def test_criterion_pcm_rates():
    from uwexplore.pcm import LoopCandidate, pcm_filter

    rng = np.random.default_rng(13)
    kept_in = total_in = rej_out = total_out = 0
    for _ in range(100):
        n = 30
        poses = [Pose2(float(i), 0.1 * math.sin(i), 0.0) for i in range(n)]
        sigma = 0.01
        cov = np.diag([(2 * sigma) ** 2, (2 * sigma) ** 2, (2 * sigma) ** 2])
        cands = []
        labels = []
        n_total = 10
        n_out = 2  # 20% gross outliers
        pairs = set()
        while len(cands) < n_total:
            t = int(rng.integers(0, n - 12))
            s = int(rng.integers(t + 11, n))
            if (t, s) in pairs:
                continue
            pairs.add((t, s))
            rel = between(poses[t], poses[s])
            outlier = len(cands) < n_out
            if outlier:
                off = rng.choice([-1.0, 1.0], 2) * 10 * sigma * rng.uniform(2.0, 5.0, 2)
                meas = Pose2(rel.x + off[0], rel.y + off[1], rel.theta)
            else:
                noise = rng.normal(0, sigma, 3)
                meas = Pose2(rel.x + noise[0], rel.y + noise[1], rel.theta + noise[2])
            cands.append(LoopCandidate(source=s, target=t, transform=meas, covariance=cov))
            labels.append(not outlier)
        accepted = pcm_filter(cands, poses)
        for c, good in zip(cands, labels):
            if good:
                total_in += 1
                kept_in += c in accepted
            else:
                total_out += 1
                rej_out += c not in accepted
    inlier_rate = kept_in / total_in
    outlier_rate = rej_out / total_out
    ok = outlier_rate >= 0.95 and inlier_rate >= 0.90
    assert verdict(
        "PCM rejection rates",
        ok,
        "outliers rejected %.1f%%, inliers kept %.1f%%" % (100 * outlier_rate, 100 * inlier_rate),
    )


def test_criterion_pcm_four_candidate_scenario():
    from uwexplore.pcm import LoopCandidate, pcm_filter

    poses = [Pose2(float(i), 0.0, 0.0) for i in range(14)]
    cov = np.diag([0.02**2, 0.02**2, 0.01**2])

    def cand(t, s, off=(0.0, 0.0)):
        rel = between(poses[t], poses[s])
        return LoopCandidate(
            source=s, target=t,
            transform=Pose2(rel.x + off[0], rel.y + off[1], rel.theta),
            covariance=cov,
        )

    good = [cand(1, 11, (0.005, -0.005)), cand(2, 12, (-0.004, 0.006)), cand(3, 13)]
    bad = cand(0, 10, (1.5, 0.0))
    accepted = pcm_filter(good + [bad], poses)
    ok = len(accepted) == 3 and bad not in accepted and all(c in accepted for c in good)
    assert verdict("PCM four-candidate scenario", ok, "3 of 4 accepted, outlier excluded")


# --------------------------------------------------------------------------
# scan matching


def test_criterion_scan_matching_recovery():
    from uwexplore.registration import SearchWindow, global_init, icp

    rng = np.random.default_rng(21)
    n_trials = 200
    hits = 0
    for _ in range(n_trials):
        n = 200
        w1 = np.stack([np.linspace(0, 10, n // 3), np.zeros(n // 3)], axis=1)
        w2 = np.stack([np.full(n // 3, 10.0), np.linspace(0, 8, n // 3)], axis=1)
        clutter = rng.uniform(0, 10, size=(n - 2 * (n // 3), 2))
        source = np.vstack([w1, w2, clutter])
        true = Pose2(
            rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-math.radians(30), math.radians(30))
        )
        target = source @ rot2(true.theta).T + true.translation()
        target = target + rng.normal(0, 0.05, size=target.shape)
        window = SearchWindow(x_half=5.5, y_half=5.5, theta_half=math.radians(32.0))
        init = global_init(source, target, window, eps=0.4)
        if init is None:
            continue
        res = icp(source, target, init[0])
        err_t = math.hypot(res.transform.x - true.x, res.transform.y - true.y)
        err_r = abs((res.transform.theta - true.theta + math.pi) % (2 * math.pi) - math.pi)
        if err_t <= 0.1 and err_r <= math.radians(1.0):
            hits += 1
    rate = hits / n_trials
    ok = rate >= 0.90
    assert verdict(
        "scan matching recovery", ok, "%.1f%% of %d trials within 0.1 m / 1 deg" % (100 * rate, n_trials)
    )


# --------------------------------------------------------------------------
# mapping idempotence


def test_criterion_mapping_rebuild_equivalence():
    from uwexplore.occupancy import MappingConfig, build_submap, merge_submaps, update_submap_pose
    from uwexplore.sensors import SensorConfig

    cfg = MappingConfig()
    sensor = SensorConfig(max_range=12.0, beams=64)
    rng = np.random.default_rng(31)
    failures = 0
    for _ in range(100):
        n = int(rng.integers(2, 6))
        maps, poses = [], {}
        for k in range(n):
            pts = rng.uniform(1.0, 10.0, size=(int(rng.integers(0, 8)), 2)) * np.array([1.0, 0.3])
            maps.append(build_submap(pts, sensor, cfg, anchor="x%d" % k))
            poses["x%d" % k] = Pose2(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-3, 3))
        grid = merge_submaps(maps, poses, origin=(-25, -25), shape=(250, 250))
        for _ in range(int(rng.integers(1, 9))):
            idx = int(rng.integers(0, n))
            key = "x%d" % idx
            new_pose = Pose2(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-3, 3))
            changed = update_submap_pose(grid, maps[idx], poses[key], new_pose, cfg)
            if changed:
                poses[key] = new_pose
        rebuilt = merge_submaps(
            [build_submap_copy(m) for m in maps], poses, origin=(-25, -25), shape=(250, 250)
        )
        if not np.array_equal(grid.ticks, rebuilt.ticks):
            failures += 1
    ok = failures == 0
    assert verdict(
        "mapping rebuild equivalence", ok, "100 randomized update sequences, %d mismatches" % failures
    )


def build_submap_copy(sm):
    from uwexplore.occupancy import Submap

    return Submap(anchor=sm.anchor, cells=sm.cells.copy(), values=sm.values.copy())


# --------------------------------------------------------------------------
# end-to-end


def test_criterion_noiseless_episode():
    from uwexplore.config import RunConfig
    from uwexplore.episode import run_episode
    from uwexplore.metrics import compute_metrics
    from uwexplore.world import bundled_world

    world = bundled_world("landmarks40")
    cfg = RunConfig()
    cfg.odom.sigma_x = cfg.odom.sigma_y = cfg.odom.sigma_theta = 0.0
    cfg.sensor.sigma_range = cfg.sensor.sigma_bearing = 0.0
    log = run_episode(world, cfg, seed=0, start_index=0, budget=300)
    s = compute_metrics(log, world)
    ok = (
        log.terminated == "complete"
        and s.coverage[-1] == 1.0
        and s.traj_rmse[-1] < 1e-6
        and s.map_error[-1] < 1e-6
    )
    assert verdict(
        "noiseless end-to-end episode",
        ok,
        "terminated=%s coverage=%.6f rmse=%.2e map=%.2e"
        % (log.terminated, s.coverage[-1], s.traj_rmse[-1], s.map_error[-1]),
    )


ORDERING_SUITE = """
world = landmarks40
policies = NF, NBV, Heuristic, EM
seeds = 10
budget = 300
workers = 2
distance_checkpoints = 0, 25, 50, 75, 100, 125, 150
coverage_targets = 0.5, 0.6, 0.7, 0.8, 0.9
sensor.max_range = 12.0
planner.heuristic_threshold = 0.06
planner.heuristic_w1 = 0.9
planner.heuristic_w2 = 0.1
planner.kmeans_cells_per_cluster = 8
"""

CHECKPOINT = 150.0


@pytest.fixture(scope="module")
def ordering_results(tmp_path_factory):
    from uwexplore.suite import parse_suite_config, run_suite

    out = tmp_path_factory.mktemp("ordering_suite")
    sc = parse_suite_config(ORDERING_SUITE)
    sc.out_dir = str(out)
    t0 = time.time()
    results = run_suite(sc)
    elapsed = time.time() - t0
    print("\nordering suite: %d episodes in %.1f min" % (len(results), elapsed / 60))
    assert elapsed < 30 * 60
    return results


def _checkpoint_value(series, attr):
    from uwexplore.metrics import value_at_distance

    return value_at_distance(series.distance, getattr(series, attr), CHECKPOINT)


def test_criterion_policy_orderings(ordering_results):
    from uwexplore.metrics import distance_to_coverage

    results = ordering_results
    policies = ("NF", "NBV", "Heuristic", "EM")
    seeds = sorted({s for (_, s) in results})
    u = {p: [] for p in policies}
    m = {p: [] for p in policies}
    d90 = {p: [] for p in policies}
    for p in policies:
        for s in seeds:
            series = results[(p, s)]
            u[p].append(_checkpoint_value(series, "pose_uncertainty"))
            m[p].append(_checkpoint_value(series, "map_error"))
            d90[p].append(distance_to_coverage(series, 0.9))
    mu = {p: float(np.mean(u[p])) for p in policies}
    mm = {p: float(np.mean(m[p])) for p in policies}
    md = {p: float(np.mean([v for v in d90[p] if math.isfinite(v)] or [math.inf])) for p in policies}

    a_mean = max(mu["EM"], mu["Heuristic"]) < min(mu["NF"], mu["NBV"])
    b_mean = md["NBV"] < md["EM"] < md["Heuristic"]
    c_mean = mm["EM"] <= mm["NF"] and mm["EM"] <= mm["NBV"]

    a_pairs = b_pairs = c_pairs = 0
    for i, s in enumerate(seeds):
        if max(u["EM"][i], u["Heuristic"][i]) < min(u["NF"][i], u["NBV"][i]):
            a_pairs += 1
        if d90["NBV"][i] < d90["EM"][i] < d90["Heuristic"][i]:
            b_pairs += 1
        if m["EM"][i] <= m["NF"][i] and m["EM"][i] <= m["NBV"][i]:
            c_pairs += 1
    n = len(seeds)
    a_ok = a_mean and a_pairs >= 0.7 * n
    b_ok = b_mean and b_pairs >= 0.7 * n
    c_ok = c_mean and c_pairs >= 0.7 * n

    verdict(
        "ordering (a) pose uncertainty",
        a_ok,
        "means EM=%.3f Heu=%.3f NF=%.3f NBV=%.3f, %d/%d seeds" % (
            mu["EM"], mu["Heuristic"], mu["NF"], mu["NBV"], a_pairs, n),
    )
    verdict(
        "ordering (b) distance to 90%% coverage",
        b_ok,
        "means NBV=%.1f EM=%.1f Heu=%.1f, %d/%d seeds" % (
            md["NBV"], md["EM"], md["Heuristic"], b_pairs, n),
    )
    verdict(
        "ordering (c) map error",
        c_ok,
        "means EM=%.2f NF=%.2f NBV=%.2f, %d/%d seeds" % (mm["EM"], mm["NF"], mm["NBV"], c_pairs, n),
    )
    assert a_ok and b_ok and c_ok


def test_criterion_suite_determinism(tmp_path):
    from uwexplore.suite import parse_suite_config, run_suite

    text = """
world = landmarks40
policies = NF, EM
seeds = 2
budget = 18
workers = 2
distance_checkpoints = 0, 10, 20
coverage_targets = 0.5, 0.7
sensor.max_range = 12.0
"""
    blobs = []
    for sub in ("r1", "r2"):
        sc = parse_suite_config(text)
        sc.out_dir = str(tmp_path / sub)
        run_suite(sc)
        blob = b""
        for f in sorted(os.listdir(sc.out_dir)):
            if f.endswith(".csv"):
                with open(os.path.join(sc.out_dir, f), "rb") as fh:
                    blob += f.encode() + fh.read()
        blobs.append(blob)
    ok = blobs[0] == blobs[1]
    assert verdict("suite byte determinism", ok, "two runs, identical CSV bytes")
