import math

import numpy as np
import pytest

from helpers import block, dense_covariance
from uwexplore.geometry import Point2, Pose2, RangeBearing, inverse_range_bearing, range_bearing_to
from uwexplore.graph import LANDMARK_OBS, PRIOR, Factor, FactorGraph
from uwexplore.occupancy import OccupancyGrid, to_ticks
from uwexplore.sensors import SensorConfig
from uwexplore.solver import solve
from uwexplore.virtual_map import (
    SplitBelief,
    downsample_to_virtual,
    estimate_virtual_covariances,
    fuse_split,
    observation_belief,
    sci_fuse,
    worst_case_prior_variance,
)

SENSOR = SensorConfig()


def test_sci_identical_fully_correlated_inputs():
    P1 = np.array([[2.0, 0.3], [0.3, 1.0]])
    a = (P1, np.zeros((2, 2)))
    Q1, Q2, w = sci_fuse(a, a)
    assert np.allclose(Q1 + Q2, P1, atol=1e-9)
    assert w == pytest.approx(0.5)


def test_sci_independent_information_adds():
    a = (np.zeros((2, 2)), np.eye(2))
    Q1, Q2, w = sci_fuse(a, a)
    assert np.allclose(Q1 + Q2, 0.5 * np.eye(2), atol=1e-9)


def test_sci_scalar_grid_oracle():
    # scalar problem embedded isotropically: all parts = I
    a = (np.eye(2), np.eye(2))
    Q1, Q2, w = sci_fuse(a, a)
    fused = Q1 + Q2

    def det_at(omega):
        pa = (1.0 / omega) * 1.0 + 1.0
        pb = (1.0 / (1.0 - omega)) * 1.0 + 1.0
        return 1.0 / (1.0 / pa + 1.0 / pb)

    grid = np.arange(1e-4, 1.0, 1e-4)
    best = min(det_at(o) for o in grid)
    assert fused[0, 0] == pytest.approx(best, abs=1e-6)
    assert fused[0, 0] == pytest.approx(1.5, abs=1e-6)
    assert w == pytest.approx(0.5, abs=1e-6)


def test_sci_omega_grid_optimality():
    rng = np.random.default_rng(3)
    for _ in range(20):
        A = rng.normal(size=(2, 2))
        B = rng.normal(size=(2, 2))
        a = (A @ A.T + 0.1 * np.eye(2), 0.2 * np.eye(2))
        b = (B @ B.T + 0.1 * np.eye(2), 0.3 * np.eye(2))
        Q1, Q2, w = sci_fuse(a, b)
        got = np.linalg.det(Q1 + Q2)
        for omega in np.arange(1e-3, 1.0, 1e-3):
            pa = a[0] / omega + a[1]
            pb = b[0] / (1.0 - omega) + b[1]
            cand = np.linalg.inv(np.linalg.inv(pa) + np.linalg.inv(pb))
            assert got <= np.linalg.det(cand) + 1e-12


def test_sci_monotone_fusion():
    rng = np.random.default_rng(4)
    belief = SplitBelief((25.0, 0.0, 25.0), (0.0, 0.0, 0.0))
    prev_det = 25.0 * 25.0
    for _ in range(30):
        A = rng.normal(size=(2, 2))
        obs = SplitBelief.from_matrices(A @ A.T + 0.05 * np.eye(2), 0.1 * np.eye(2))
        belief, _ = fuse_split(belief, obs)
        det = np.linalg.det(belief.total())
        assert det <= prev_det + 1e-12
        prev_det = det


def test_sci_rejects_degenerate_inputs():
    with pytest.raises(ValueError):
        sci_fuse((np.zeros((2, 2)), np.zeros((2, 2))), (np.eye(2), np.eye(2)))
    with pytest.raises(ValueError):
        sci_fuse((-np.eye(2), np.eye(2)), (np.eye(2), np.eye(2)))


def _joint_landmark_cov(poses, pose_covs, landmark, meas_cov):
    """Dense joint solve of a tiny landmark problem (consistency oracle)."""
    g = FactorGraph()
    for i, (p, c) in enumerate(zip(poses, pose_covs)):
        g.add_pose(i, p)
        g.add_factor(Factor(PRIOR, ("x%d" % i,), p, c))
    g.add_landmark(0, landmark)
    for i, p in enumerate(poses):
        z = range_bearing_to(p, landmark)
        g.add_factor(Factor(LANDMARK_OBS, ("x%d" % i, "l0"), z, meas_cov))
    sol = solve(g)
    cov, order, offsets = dense_covariance(g, sol.estimates)
    return block(cov, offsets, "l0", "l0")


def test_sci_upper_bounds_joint_solve():
    rng = np.random.default_rng(5)
    meas_cov = np.diag([0.04, 0.01])
    for trial in range(50):
        poses = [
            Pose2(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3))
            for _ in range(2)
        ]
        pose_covs = []
        for _ in poses:
            A = rng.normal(size=(3, 3)) * 0.2
            pose_covs.append(A @ A.T + 0.02 * np.eye(3))
        lm = Point2(rng.uniform(4, 8), rng.uniform(-2, 2))
        joint = _joint_landmark_cov(poses, pose_covs, lm, meas_cov)

        belief = SplitBelief((100.0, 0.0, 100.0), (0.0, 0.0, 0.0))
        for p, c in zip(poses, pose_covs):
            obs = observation_belief(p, c, lm, meas_cov)
            belief, _ = fuse_split(belief, obs)
        diff = belief.total() - joint
        assert np.linalg.eigvalsh(diff).min() >= -1e-9


def test_estimate_fuses_prior_with_noise_only_observation():
    grid = OccupancyGrid(origin=(0, 0), shape=(40, 40), resolution=0.2)
    grid.ticks[:, :] = -to_ticks(1.0)
    # make exactly one coarse cell present: occupied fine cell inside it
    grid.ticks[25, 5] = to_ticks(1.0)
    vmap = downsample_to_virtual(grid, 2.0, prior_var=100.0)
    cells = vmap.present_cells()
    assert cells == [(0, 2)]

    center = vmap.cell_center(0, 2)
    # aim the sensor straight at the cell center from 5 m away
    pose = Pose2(center[0] + 5.0, center[1], math.pi)
    meas_cov = SENSOR.noise_cov()
    est = estimate_virtual_covariances(vmap, [(pose, np.zeros((3, 3)))], SENSOR)
    belief, cov = est[(0, 2)]

    z = range_bearing_to(pose, Point2(center[0], center[1]))
    _, H, G = inverse_range_bearing(pose, z)
    P2 = G @ meas_cov @ G.T
    expected = np.linalg.inv(np.eye(2) / 100.0 + np.linalg.inv(P2))
    assert np.allclose(cov, expected, atol=1e-9)


def test_estimate_keeps_prior_when_unobserved():
    grid = OccupancyGrid(origin=(0, 0), shape=(20, 20), resolution=0.2)
    vmap = downsample_to_virtual(grid, 2.0, prior_var=64.0)
    est = estimate_virtual_covariances(vmap, [], SENSOR)
    for _, cov in est.values():
        assert np.allclose(cov, 64.0 * np.eye(2))


def test_downsample_presence_rules():
    grid = OccupancyGrid(origin=(0, 0), shape=(40, 40), resolution=0.2)
    vmap = downsample_to_virtual(grid, 2.0, prior_var=10.0)
    assert vmap.presence.all()  # fully unknown -> every coarse cell present

    grid.ticks[:, :] = -to_ticks(0.5)
    vmap = downsample_to_virtual(grid, 2.0, prior_var=10.0)
    assert not vmap.presence.any()  # fully free -> none

    grid.ticks[13, 27] = to_ticks(0.5)
    vmap = downsample_to_virtual(grid, 2.0, prior_var=10.0)
    assert vmap.presence[1, 2] and vmap.presence.sum() == 1


def test_downsample_preserves_persisting_beliefs():
    grid = OccupancyGrid(origin=(0, 0), shape=(40, 40), resolution=0.2)
    vmap = downsample_to_virtual(grid, 2.0, prior_var=10.0)
    marked = SplitBelief((1.0, 0.0, 1.0), (0.5, 0.0, 0.5))
    vmap.beliefs[(3, 3)] = marked
    grid.ticks[0:10, 0:10] = -to_ticks(0.5)  # coarse (0, 0) becomes free
    vmap2 = downsample_to_virtual(grid, 2.0, prior_var=10.0, previous=vmap)
    assert (0, 0) not in vmap2.beliefs
    assert vmap2.beliefs[(3, 3)] is marked


def test_downsample_requires_multiple_resolution():
    grid = OccupancyGrid(origin=(0, 0), shape=(40, 40), resolution=0.3)
    with pytest.raises(ValueError):
        downsample_to_virtual(grid, 2.0, prior_var=10.0)


def test_prior_variance_exceeds_single_observation():
    from uwexplore.sensors import OdomConfig

    var = worst_case_prior_variance(SENSOR, OdomConfig(), bbox_diag=56.0, speed=0.5, dt=0.2)
    assert var > SENSOR.max_range**2 * SENSOR.sigma_bearing**2  # larger than G R G' scale
