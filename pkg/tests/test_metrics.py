import math

import numpy as np
import pytest

from uwexplore.episode import EpisodeLog, StepRecord
from uwexplore.geometry import Pose2
from uwexplore.metrics import (
    MetricSeries,
    compute_metrics,
    csv_to_series,
    distance_to_coverage,
    series_to_csv,
    value_at_distance,
)

COV = np.diag([0.01, 0.01, 0.001])


def make_log(truths, ests, known=None, total=100):
    log = EpisodeLog(header={"total_box_cells": total})
    d = 0.0
    for i, (t, e) in enumerate(zip(truths, ests)):
        if i > 0:
            prev = truths[i - 1]
            d += math.hypot(t.x - prev.x, t.y - prev.y)
        sse = sum(
            (a.x - b.x) ** 2 + (a.y - b.y) ** 2 for a, b in zip(ests[: i + 1], truths[: i + 1])
        )
        log.steps.append(
            StepRecord(
                index=i,
                truth=t,
                est=e,
                cov=COV,
                distance=d,
                known_cells=known[i] if known else (i + 1) * 10,
                traj_sse=sse,
                n_poses=i + 1,
                map_sse=0.0,
                n_map_points=0,
            )
        )
    return log


def test_exact_estimate_zero_errors():
    truths = [Pose2(i, 0, 0) for i in range(5)]
    log = make_log(truths, truths)
    s = compute_metrics(log)
    assert all(v == 0.0 for v in s.traj_rmse)
    assert all(v == 0.0 for v in s.map_error)


def test_constant_offset_rmse_closed_form():
    truths = [Pose2(i, 0, 0) for i in range(6)]
    ests = [Pose2(i + 1.0, 0, 0) for i in range(6)]
    log = make_log(truths, ests)
    s = compute_metrics(log)
    assert all(v == pytest.approx(1.0) for v in s.traj_rmse)


def test_full_coverage_is_one():
    truths = [Pose2(i, 0, 0) for i in range(3)]
    log = make_log(truths, truths, known=[50, 80, 100], total=100)
    s = compute_metrics(log)
    assert s.coverage == [0.5, 0.8, 1.0]


def test_pose_uncertainty_cube_root_det():
    truths = [Pose2(0, 0, 0)]
    log = make_log(truths, truths)
    s = compute_metrics(log)
    assert s.pose_uncertainty[0] == pytest.approx(np.linalg.det(COV) ** (1 / 3))


def test_distance_monotonicity_enforced():
    truths = [Pose2(0, 0, 0), Pose2(1, 0, 0)]
    log = make_log(truths, truths)
    log.steps[1].distance = -1.0
    with pytest.raises(ValueError):
        compute_metrics(log)


def test_csv_roundtrip_exact():
    truths = [Pose2(i * 0.7, i * 0.1, 0.01 * i) for i in range(8)]
    ests = [Pose2(t.x + 0.05, t.y - 0.03, t.theta) for t in truths]
    log = make_log(truths, ests)
    s = compute_metrics(log)
    text = series_to_csv(s)
    s2 = csv_to_series(text)
    assert s2.distance == s.distance
    assert s2.pose_uncertainty == s.pose_uncertainty
    assert s2.traj_rmse == s.traj_rmse
    assert s2.map_error == s.map_error
    assert s2.coverage == s.coverage
    assert series_to_csv(s2) == text


def test_value_at_distance_interpolation():
    dist = [0.0, 10.0, 20.0]
    vals = [1.0, 3.0, 5.0]
    assert value_at_distance(dist, vals, 5.0) == pytest.approx(2.0)
    assert value_at_distance(dist, vals, 0.0) == 1.0
    assert value_at_distance(dist, vals, 25.0) == 5.0


def test_distance_to_coverage_monotone_in_target():
    s = MetricSeries()
    s.distance = [0.0, 10.0, 20.0, 30.0]
    s.coverage = [0.1, 0.5, 0.7, 0.95]
    ds = [distance_to_coverage(s, t) for t in (0.3, 0.5, 0.6, 0.9)]
    assert all(ds[i] <= ds[i + 1] for i in range(len(ds) - 1))
    assert distance_to_coverage(s, 0.99) == math.inf


def test_missing_ground_truth_omits_error_series():
    truths = [Pose2(i, 0, 0) for i in range(3)]
    log = make_log(truths, truths)
    for st in log.steps:
        st.n_poses = 0
    s = compute_metrics(log)
    assert s.traj_rmse == [] and s.map_error == []
    assert len(s.pose_uncertainty) == 3 and len(s.coverage) == 3
