"""Metric-versus-distance curve panels with confidence bands."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .io import EpisodeSeries

PANELS = [
    ("coverage", "Map coverage"),
    ("pose_uncertainty", "Pose uncertainty"),
    ("traj_rmse", "Trajectory error (m)"),
    ("map_error", "Map error (m)"),
]

POLICY_STYLE = {
    "NF": dict(color="#1f77b4"),
    "NBV": dict(color="#ff7f0e"),
    "Heuristic": dict(color="#2ca02c"),
    "EM": dict(color="#d62728"),
}
FALLBACK_COLORS = ["#9467bd", "#8c564b", "#e377c2", "#7f7f7f"]


def resample(series: EpisodeSeries, metric: str, grid: np.ndarray):
    vals = series.metrics.get(metric)
    if vals is None or len(vals) == 0:
        return None
    return np.interp(grid, series.distance, vals)


def band_stats(episodes: list, metric: str, grid: np.ndarray):
    """Mean and 1.96-standard-error half-width per grid point."""
    rows = [r for r in (resample(e, metric, grid) for e in episodes) if r is not None]
    if not rows:
        return None, None, 0
    m = np.mean(rows, axis=0)
    if len(rows) > 1:
        se = np.std(rows, axis=0, ddof=1) / np.sqrt(len(rows))
        half = 1.96 * se
    else:
        half = None
    return m, half, len(rows)


def compute_curves(episodes: list, n_grid: int = 60) -> dict:
    """Per-policy band data on a shared distance grid.

    Returns {"grid": distances, "policies": {name: {metric: (mean, half)}}}.
    """
    if not episodes:
        raise ValueError("no episode CSVs found")
    d_max = min(e.distance[-1] for e in episodes)
    grid = np.linspace(0.0, d_max, n_grid)
    policies = sorted({e.policy for e in episodes})
    out = {"grid": grid, "policies": {}}
    for p in policies:
        eps = [e for e in episodes if e.policy == p]
        out["policies"][p] = {
            metric: band_stats(eps, metric, grid) for metric, _ in PANELS
        }
    return out


def _style(policy: str, i: int) -> dict:
    return POLICY_STYLE.get(policy, dict(color=FALLBACK_COLORS[i % len(FALLBACK_COLORS)]))


def render_curves(episodes: list, out_path: str, fmt: str = "raster", dpi: int = 110) -> dict:
    """Render one panel per metric, one line per policy, shaded CI bands.

    Returns the band data used for the plot. Output bytes are deterministic
    for fixed inputs.
    """
    data = compute_curves(episodes)
    grid = data["grid"]
    fig, axes = plt.subplots(1, len(PANELS), figsize=(4.2 * len(PANELS), 3.4))
    for ax, (metric, title) in zip(np.atleast_1d(axes), PANELS):
        drew = False
        for i, (policy, stats) in enumerate(sorted(data["policies"].items())):
            mean, half, n = stats[metric]
            if mean is None:
                continue
            style = _style(policy, i)
            ax.plot(grid, mean, label=policy, linewidth=1.6, **style)
            if half is not None:
                ax.fill_between(grid, mean - half, mean + half, alpha=0.2,
                                linewidth=0, **style)
            drew = True
        ax.set_title(title)
        ax.set_xlabel("distance traveled (m)")
        ax.grid(True, alpha=0.3)
        if drew:
            ax.legend(fontsize=8)
    fig.tight_layout()
    _save_deterministic(fig, out_path, fmt, dpi)
    plt.close(fig)
    return data


def _save_deterministic(fig, out_path: str, fmt: str, dpi: int):
    os.makedirs(os.path.dirname(out_path) or ".", exist_ok=True)
    if fmt == "vector":
        plt.rcParams["svg.hashsalt"] = "uwexplore-report"
        fig.savefig(out_path, format="svg", metadata={"Date": None})
    else:
        fig.savefig(out_path, format="png", dpi=dpi)
