"""Per-episode metric series and their CSV round trip."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

COLUMNS = ["step", "distance", "pose_uncertainty", "traj_rmse", "map_error", "coverage"]


@dataclass
class MetricSeries:
    distance: list = field(default_factory=list)
    pose_uncertainty: list = field(default_factory=list)
    traj_rmse: list = field(default_factory=list)
    map_error: list = field(default_factory=list)
    coverage: list = field(default_factory=list)
    has_ground_truth: bool = True

    def __len__(self):
        return len(self.distance)


def compute_metrics(log, world=None, total_box_cells: int = None) -> MetricSeries:
    """Exact metric evaluation from a complete episode log.

    Pose uncertainty is det(cov)^(1/3); trajectory and map errors come from
    the logged sufficient statistics (sums of squared errors against ground
    truth, revised at every step); coverage is known cells over box cells.
    When ground truth is absent the error series are empty but uncertainty
    and coverage are still produced.
    """
    series = MetricSeries()
    if total_box_cells is None:
        total_box_cells = log.header.get("total_box_cells")
    if total_box_cells is None and world is not None:
        xmin, ymin, xmax, ymax = world.bbox
        total_box_cells = int(round((xmax - xmin) / 0.2)) * int(round((ymax - ymin) / 0.2))
    has_truth = all(s.n_poses > 0 for s in log.steps)
    prev_d = -math.inf
    for s in log.steps:
        if s.distance < prev_d:
            raise ValueError("distance series is not monotone")
        prev_d = s.distance
        series.distance.append(s.distance)
        series.pose_uncertainty.append(max(float(np.linalg.det(s.cov)), 0.0) ** (1.0 / 3.0))
        if has_truth:
            series.traj_rmse.append(math.sqrt(s.traj_sse / max(s.n_poses, 1)))
            series.map_error.append(
                math.sqrt(s.map_sse / s.n_map_points) if s.n_map_points else 0.0
            )
        series.coverage.append(s.known_cells / total_box_cells if total_box_cells else 0.0)
    series.has_ground_truth = has_truth
    if not has_truth:
        series.traj_rmse = []
        series.map_error = []
    return series


def series_to_csv(series: MetricSeries) -> str:
    lines = [",".join(COLUMNS)]
    for i in range(len(series)):
        row = [
            str(i),
            repr(series.distance[i]),
            repr(series.pose_uncertainty[i]),
            repr(series.traj_rmse[i]) if series.traj_rmse else "",
            repr(series.map_error[i]) if series.map_error else "",
            repr(series.coverage[i]),
        ]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def csv_to_series(text: str) -> MetricSeries:
    lines = [l for l in text.splitlines() if l]
    if lines[0] != ",".join(COLUMNS):
        raise ValueError("unexpected CSV header: %s" % lines[0])
    series = MetricSeries()
    for line in lines[1:]:
        parts = line.split(",")
        series.distance.append(float(parts[1]))
        series.pose_uncertainty.append(float(parts[2]))
        if parts[3]:
            series.traj_rmse.append(float(parts[3]))
        if parts[4]:
            series.map_error.append(float(parts[4]))
        series.coverage.append(float(parts[5]))
    series.has_ground_truth = bool(series.traj_rmse)
    return series


def value_at_distance(distance: list, values: list, d: float) -> float:
    """Linear interpolation of a metric series at a distance checkpoint."""
    if not distance:
        return math.nan
    if d <= distance[0]:
        return values[0]
    if d >= distance[-1]:
        return values[-1]
    i = int(np.searchsorted(distance, d, side="right")) - 1
    d0, d1 = distance[i], distance[i + 1]
    if d1 == d0:
        return values[i + 1]
    t = (d - d0) / (d1 - d0)
    return values[i] * (1 - t) + values[i + 1] * t


def distance_to_coverage(series: MetricSeries, target: float) -> float:
    """First distance at which coverage reaches the target (interpolated)."""
    cov = series.coverage
    dist = series.distance
    for i, c in enumerate(cov):
        if c >= target:
            if i == 0 or cov[i] == cov[i - 1]:
                return dist[i]
            t = (target - cov[i - 1]) / (cov[i] - cov[i - 1])
            return dist[i - 1] * (1 - t) + dist[i] * t
    return math.inf
