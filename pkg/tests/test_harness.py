import math
import os

import numpy as np
import pytest

from uwexplore.config import ConfigError, RunConfig, format_config, parse_config
from uwexplore.metrics import MetricSeries
from uwexplore.suite import (
    SuiteConfig,
    aggregate_at_checkpoints,
    aggregate_coverage_distance,
    parse_suite_config,
    run_suite,
)


def test_config_roundtrip_and_overrides():
    cfg = parse_config("sensor.max_range = 12.0\nplanner.policy = NF\nslam.max_iters = 5\n")
    assert cfg.sensor.max_range == 12.0
    assert cfg.planner.policy == "NF"
    assert cfg.slam.max_iters == 5
    text = format_config(cfg)
    cfg2 = parse_config(text)
    assert format_config(cfg2) == text


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        parse_config("sensor.max_rage = 12.0\n")
    with pytest.raises(ConfigError):
        parse_config("sonar.max_range = 12.0\n")
    with pytest.raises(ConfigError):
        parse_config("max_range = 12.0\n")
    with pytest.raises(ConfigError):
        parse_config("sensor.max_range = 12\nsensor.max_range = 13\n")


def test_config_validation_still_applies():
    with pytest.raises(ValueError):
        parse_config("planner.policy = FOO\n")
    with pytest.raises(ValueError):
        parse_config("sensor.min_range = 50.0\n")


def test_suite_config_parsing():
    sc = parse_suite_config(
        "world = landmarks40\npolicies = NF, EM\nseeds = 3\nbudget = 50\n"
        "sensor.max_range = 12.0\ncoverage_targets = 0.5, 0.9\n"
    )
    assert sc.policies == ("NF", "EM")
    assert sc.seeds == 3
    assert sc.overrides == {"sensor.max_range": "12.0"}
    with pytest.raises(ValueError):
        parse_suite_config("bogus = 1\n")


def _series(dists, cov, unc):
    s = MetricSeries()
    s.distance = list(dists)
    s.coverage = list(cov)
    s.pose_uncertainty = list(unc)
    s.traj_rmse = [0.0] * len(dists)
    s.map_error = [0.0] * len(dists)
    return s


def test_aggregate_mean_matches_hand_average():
    r = {
        ("NF", 0): _series([0, 10, 20], [0.1, 0.5, 1.0], [1.0, 2.0, 3.0]),
        ("NF", 1): _series([0, 10, 20], [0.2, 0.6, 1.0], [2.0, 3.0, 4.0]),
    }
    table = aggregate_at_checkpoints(r, ["NF"], (10.0,), "pose_uncertainty")
    means, cis = table["NF"]
    assert means[0] == pytest.approx((2.0 + 3.0) / 2)
    se = np.std([2.0, 3.0], ddof=1) / math.sqrt(2)
    assert cis[0] == pytest.approx(1.96 * se)


def test_aggregates_permutation_invariant():
    a = {
        ("NF", 0): _series([0, 10], [0.1, 0.9], [1.0, 2.0]),
        ("NF", 1): _series([0, 10], [0.1, 0.95], [2.0, 1.0]),
    }
    b = dict(reversed(list(a.items())))
    ta = aggregate_at_checkpoints(a, ["NF"], (5.0, 10.0), "pose_uncertainty")
    tb = aggregate_at_checkpoints(b, ["NF"], (5.0, 10.0), "pose_uncertainty")
    assert ta == tb


def test_coverage_distance_aggregate_monotone():
    r = {
        ("EM", 0): _series([0, 10, 20, 30], [0.2, 0.5, 0.8, 0.95], [1, 1, 1, 1]),
        ("EM", 1): _series([0, 10, 20, 30], [0.3, 0.6, 0.85, 0.92], [1, 1, 1, 1]),
    }
    table = aggregate_coverage_distance(r, ["EM"], (0.5, 0.7, 0.9))
    means, _ = table["EM"]
    assert means[0] < means[1] < means[2]


SUITE_TEXT = """
world = landmarks40
policies = NF
seeds = 1
budget = 12
workers = 1
out_dir = {out}
distance_checkpoints = 0, 5, 10
coverage_targets = 0.5, 0.9
sensor.max_range = 12.0
"""


def test_run_suite_produces_artifacts(tmp_path):
    out = tmp_path / "suite"
    sc = parse_suite_config(SUITE_TEXT.format(out=out))
    results = run_suite(sc)
    assert ("NF", 0) in results
    files = sorted(os.listdir(out))
    assert any(f.startswith("episode_NF_seed000") and f.endswith(".csv") for f in files)
    assert "table_pose_uncertainty.csv" in files
    assert "table_coverage_distance.csv" in files
    # resume: re-running does not recompute (same artifact bytes)
    before = {f: (out / f).read_bytes() for f in files}
    run_suite(sc)
    for f in files:
        assert (out / f).read_bytes() == before[f]


def test_suite_byte_determinism(tmp_path):
    texts = []
    for sub in ("a", "b"):
        out = tmp_path / sub
        sc = parse_suite_config(SUITE_TEXT.format(out=out))
        run_suite(sc)
        blob = b""
        for f in sorted(os.listdir(out)):
            blob += f.encode() + (out / f).read_bytes()
        texts.append(blob)
    assert texts[0] == texts[1]
