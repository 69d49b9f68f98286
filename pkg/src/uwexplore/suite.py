"""Multi-episode benchmark suites with per-policy aggregate tables.

Episodes are cached by a fingerprint of (world, config, seed, start), so an
interrupted suite resumes without re-running completed episodes. All CSV
output uses repr floats and fixed ordering: identical configs produce
byte-identical artifacts.
"""

from __future__ import annotations

import math
import multiprocessing
import os
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig, apply_overrides, load_config
from .episode import EpisodeLog, config_fingerprint, run_episode
from .metrics import (
    MetricSeries,
    compute_metrics,
    csv_to_series,
    distance_to_coverage,
    series_to_csv,
    value_at_distance,
)
from .world import World, bundled_world, load_world

POLICIES = ("NF", "NBV", "Heuristic", "EM")


@dataclass
class SuiteConfig:
    world: str = "landmarks40"
    world_path: str = ""
    policies: tuple = POLICIES
    seeds: int = 10
    budget: int = 400
    out_dir: str = "suite_out"
    workers: int = 1
    distance_checkpoints: tuple = (0.0, 25.0, 50.0, 75.0, 100.0, 150.0, 200.0)
    coverage_targets: tuple = (0.5, 0.6, 0.7, 0.8, 0.9)
    overrides: dict = field(default_factory=dict)

    def load_world(self) -> World:
        if self.world_path:
            return load_world(self.world_path)
        return bundled_world(self.world)

    def run_config(self, policy: str) -> RunConfig:
        cfg = RunConfig()
        apply_overrides(cfg, dict(self.overrides))
        cfg.planner.policy = policy
        return cfg


def parse_suite_config(text: str) -> SuiteConfig:
    sc = SuiteConfig()
    overrides = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, val = (p.strip() for p in line.split("=", 1))
        if key == "world":
            sc.world = val
        elif key == "world_path":
            sc.world_path = val
        elif key == "policies":
            sc.policies = tuple(v.strip() for v in val.split(",") if v.strip())
        elif key == "seeds":
            sc.seeds = int(val)
        elif key == "budget":
            sc.budget = int(val)
        elif key == "out_dir":
            sc.out_dir = val
        elif key == "workers":
            sc.workers = int(val)
        elif key == "distance_checkpoints":
            sc.distance_checkpoints = tuple(float(v) for v in val.split(",") if v.strip())
        elif key == "coverage_targets":
            sc.coverage_targets = tuple(float(v) for v in val.split(",") if v.strip())
        elif "." in key:
            overrides[key] = val
        else:
            raise ValueError("line %d: unknown suite key %r" % (lineno, key))
    sc.overrides = overrides
    return sc


def _episode_task(args):
    world, cfg, seed, start, budget = args
    log = run_episode(world, cfg, seed, start, budget)
    return log


def episode_filename(policy: str, seed: int, fingerprint: str) -> str:
    return "episode_%s_seed%03d_%s" % (policy, seed, fingerprint)


def run_suite(sc: SuiteConfig) -> dict:
    """Run policies x seeds, producing per-episode CSVs and aggregate tables.

    Returns {(policy, seed): MetricSeries}. Episode failures are recorded in
    failures.csv and the suite continues.
    """
    world = sc.load_world()
    os.makedirs(sc.out_dir, exist_ok=True)
    tasks = []
    meta = []
    for policy in sc.policies:
        for seed in range(sc.seeds):
            cfg = sc.run_config(policy)
            start = seed % max(len(world.starts), 1)
            fp = config_fingerprint(world, cfg, seed, start)
            base = os.path.join(sc.out_dir, episode_filename(policy, seed, fp))
            meta.append((policy, seed, base))
            if not os.path.exists(base + ".csv"):
                tasks.append(((world, cfg, seed, start, sc.budget), base))

    if tasks and sc.workers > 1:
        with multiprocessing.Pool(sc.workers) as pool:
            logs = pool.map(_episode_task, [t[0] for t in tasks])
    else:
        logs = [_episode_task(t[0]) for t in tasks]
    for (args, base), log in zip(tasks, logs):
        with open(base + ".log", "w", encoding="utf-8") as fh:
            fh.write(log.to_text())
        with open(base + ".pgm", "wb") as fh:
            fh.write(log.grid_bytes)
        series = compute_metrics(log, world)
        with open(base + ".csv", "w", encoding="utf-8") as fh:
            fh.write(series_to_csv(series))
        if log.terminated == "failed":
            with open(os.path.join(sc.out_dir, "failures.csv"), "a", encoding="utf-8") as fh:
                fh.write("%s,%d,%s\n" % (args[1].planner.policy, args[2], log.header.get("error", "")))

    results = {}
    for policy, seed, base in meta:
        with open(base + ".csv", "r", encoding="utf-8") as fh:
            results[(policy, seed)] = csv_to_series(fh.read())
    write_aggregates(sc, results)
    return results


def _mean_ci(values: list) -> tuple:
    vals = [v for v in values if not math.isnan(v)]
    if not vals:
        return math.nan, math.nan
    m = float(np.mean(vals))
    if len(vals) < 2:
        return m, 0.0
    se = float(np.std(vals, ddof=1)) / math.sqrt(len(vals))
    return m, 1.96 * se


def aggregate_at_checkpoints(results: dict, policies, checkpoints, attr: str) -> dict:
    """{policy: ([means], [ci half-widths])} of a metric at distance checkpoints."""
    out = {}
    for policy in policies:
        means, cis = [], []
        for d in checkpoints:
            vals = []
            for (p, _), series in sorted(results.items()):
                if p != policy:
                    continue
                vv = getattr(series, attr)
                if vv:
                    vals.append(value_at_distance(series.distance, vv, d))
            m, ci = _mean_ci(vals)
            means.append(m)
            cis.append(ci)
        out[policy] = (means, cis)
    return out


def aggregate_coverage_distance(results: dict, policies, targets) -> dict:
    out = {}
    for policy in policies:
        means, cis = [], []
        for t in targets:
            vals = []
            for (p, _), series in sorted(results.items()):
                if p == policy:
                    d = distance_to_coverage(series, t)
                    if math.isfinite(d):
                        vals.append(d)
            m, ci = _mean_ci(vals)
            means.append(m)
            cis.append(ci)
        out[policy] = (means, cis)
    return out


def _table_csv(header_vals, table: dict, policies) -> str:
    lines = ["policy," + ",".join(repr(float(v)) for v in header_vals)]
    for policy in policies:
        means, _ = table[policy]
        lines.append(policy + "," + ",".join(repr(float(v)) for v in means))
    lines.append("")
    lines.append("policy_ci," + ",".join(repr(float(v)) for v in header_vals))
    for policy in policies:
        _, cis = table[policy]
        lines.append(policy + "," + ",".join(repr(float(v)) for v in cis))
    return "\n".join(lines) + "\n"


def write_aggregates(sc: SuiteConfig, results: dict):
    policies = [p for p in sc.policies]
    specs = [
        ("pose_uncertainty", "table_pose_uncertainty.csv"),
        ("traj_rmse", "table_pose_error.csv"),
        ("map_error", "table_map_error.csv"),
        ("coverage", "table_coverage.csv"),
    ]
    for attr, name in specs:
        table = aggregate_at_checkpoints(results, policies, sc.distance_checkpoints, attr)
        with open(os.path.join(sc.out_dir, name), "w", encoding="utf-8") as fh:
            fh.write(_table_csv(sc.distance_checkpoints, table, policies))
    cov = aggregate_coverage_distance(results, policies, sc.coverage_targets)
    with open(os.path.join(sc.out_dir, "table_coverage_distance.csv"), "w", encoding="utf-8") as fh:
        fh.write(_table_csv(sc.coverage_targets, cov, policies))
