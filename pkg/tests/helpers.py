"""Shared test fixtures: random solvable graphs and dense covariance oracles."""

import numpy as np

from uwexplore.geometry import Point2, Pose2, RangeBearing, between, compose, range_bearing_to
from uwexplore.graph import (
    LANDMARK_OBS,
    LOOP_CLOSURE,
    ODOMETRY,
    PRIOR,
    Factor,
    FactorGraph,
)
from uwexplore.solver import dense_information


def random_graph(
    rng,
    n_poses=10,
    n_landmarks=0,
    n_closures=0,
    meas_noise=0.0,
    init_jitter=0.02,
):
    """Random-walk trajectory with optional landmarks and loop closures.

    Measurements are model-consistent up to meas_noise, so Gauss-Newton
    converges in a couple of iterations on every generated graph.
    """
    g = FactorGraph()
    truth = [Pose2(0.0, 0.0, 0.0)]
    g.add_pose(0, truth[0])
    prior_cov = np.diag([0.05**2, 0.05**2, 0.02**2])
    g.add_factor(Factor(PRIOR, ("x0",), truth[0], prior_cov))
    for i in range(1, n_poses):
        step = Pose2(rng.uniform(0.5, 1.5), rng.uniform(-0.2, 0.2), rng.uniform(-0.6, 0.6))
        truth.append(compose(truth[-1], step))
        noisy = Pose2(
            step.x + rng.normal(0, meas_noise),
            step.y + rng.normal(0, meas_noise),
            step.theta + rng.normal(0, meas_noise),
        )
        sx, sy, st = rng.uniform(0.1, 0.25, 3)
        g.add_pose(
            i,
            Pose2(
                truth[i].x + rng.normal(0, init_jitter),
                truth[i].y + rng.normal(0, init_jitter),
                truth[i].theta + rng.normal(0, init_jitter),
            ),
        )
        g.add_factor(
            Factor(ODOMETRY, ("x%d" % (i - 1), "x%d" % i), noisy, np.diag([sx**2, sy**2, st**2]))
        )
    lms = []
    for j in range(n_landmarks):
        p = Point2(rng.uniform(-2, 8), rng.uniform(-5, 5))
        lms.append(p)
        g.add_landmark(j, Point2(p.x + rng.normal(0, init_jitter), p.y + rng.normal(0, init_jitter)))
        seen = rng.choice(n_poses, size=min(3, n_poses), replace=False)
        for i in sorted(int(s) for s in seen):
            z = range_bearing_to(truth[i], p)
            zn = RangeBearing(
                max(z.range + rng.normal(0, meas_noise), 0.05),
                z.bearing + rng.normal(0, meas_noise),
            )
            g.add_factor(
                Factor(LANDMARK_OBS, ("x%d" % i, "l%d" % j), zn, np.diag([0.04, 0.01]))
            )
    added = set()
    for _ in range(n_closures):
        if n_poses < 4:
            break
        a = int(rng.integers(0, n_poses - 3))
        b = int(rng.integers(a + 2, n_poses))
        if (a, b) in added:
            continue
        added.add((a, b))
        rel = between(truth[a], truth[b])
        noisy = Pose2(
            rel.x + rng.normal(0, meas_noise),
            rel.y + rng.normal(0, meas_noise),
            rel.theta + rng.normal(0, meas_noise),
        )
        g.add_factor(
            Factor(LOOP_CLOSURE, ("x%d" % a, "x%d" % b), noisy, np.diag([0.04, 0.04, 0.01]))
        )
    return g, truth, lms


def dense_covariance(graph, values):
    lam, order, offsets = dense_information(graph, values)
    return np.linalg.inv(lam), order, offsets


def block(cov, offsets, a, b):
    oa, da = offsets[a]
    ob, db = offsets[b]
    return cov[oa:oa + da, ob:ob + db]
