"""Readers for the benchmark artifact formats.

These parse the documented on-disk formats (metric CSVs, P5 greymaps,
JSON-lines episode logs) without importing the producer package, so this
tool runs against any directory of artifacts.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field

import numpy as np

CSV_COLUMNS = ["step", "distance", "pose_uncertainty", "traj_rmse", "map_error", "coverage"]

EPISODE_RE = re.compile(r"episode_(?P<policy>[A-Za-z]+)_seed(?P<seed>\d+)_[0-9a-f]+\.csv$")


class SchemaError(Exception):
    pass


@dataclass
class EpisodeSeries:
    policy: str
    seed: int
    distance: np.ndarray
    metrics: dict  # column name -> ndarray (may be empty for missing truth)


def read_metric_csv(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [l for l in fh.read().splitlines() if l]
    header = lines[0].split(",")
    if header != CSV_COLUMNS:
        missing = [c for c in CSV_COLUMNS if c not in header]
        raise SchemaError(
            "%s: unexpected CSV schema; missing columns %s (got %s)" % (path, missing, header)
        )
    cols = {c: [] for c in CSV_COLUMNS}
    for line in lines[1:]:
        parts = line.split(",")
        for c, v in zip(CSV_COLUMNS, parts):
            cols[c].append(float(v) if v else np.nan)
    return {c: np.array(v) for c, v in cols.items()}


def discover_episodes(in_dir: str) -> list:
    out = []
    for name in sorted(os.listdir(in_dir)):
        m = EPISODE_RE.match(name)
        if not m:
            continue
        cols = read_metric_csv(os.path.join(in_dir, name))
        metrics = {
            k: cols[k][~np.isnan(cols[k])]
            for k in ("pose_uncertainty", "traj_rmse", "map_error", "coverage")
        }
        # a column that is entirely NaN was omitted by the producer
        metrics = {k: (v if len(v) == len(cols["distance"]) else np.array([])) for k, v in metrics.items()}
        out.append(
            EpisodeSeries(
                policy=m.group("policy"),
                seed=int(m.group("seed")),
                distance=cols["distance"],
                metrics=metrics,
            )
        )
    return out


def read_greymap(path: str):
    """Returns (origin, resolution, byte array) from a P5 occupancy export."""
    with open(path, "rb") as fh:
        blob = fh.read()
    parts = blob.split(b"\n", 4)
    if parts[0] != b"P5":
        raise SchemaError("%s: not a P5 greymap" % path)
    meta = parts[1].decode("ascii").split()
    if len(meta) < 6 or meta[1] != "origin":
        raise SchemaError("%s: missing origin/resolution header" % path)
    origin = (float(meta[2]), float(meta[3]))
    resolution = float(meta[5])
    nx, ny = (int(v) for v in parts[2].split())
    data = np.frombuffer(parts[4], dtype=np.uint8, count=nx * ny).reshape(ny, nx)
    return origin, resolution, data


@dataclass
class EpisodeLogData:
    header: dict = field(default_factory=dict)
    poses: dict = field(default_factory=dict)      # keyframe index -> (x, y, theta)
    closures: list = field(default_factory=list)   # (i, j)
    goals: list = field(default_factory=list)      # (x, y, kind)


def read_episode_log(path: str) -> EpisodeLogData:
    data = EpisodeLogData()
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            kind = rec.get("type")
            if kind == "header":
                data.header = rec
            elif kind == "state":
                data.poses[rec["k"]] = tuple(rec["est"])
            elif kind == "closure":
                data.closures.append((rec["i"], rec["j"]))
            elif kind == "decision" and rec.get("chosen"):
                chosen = rec["chosen"]
                for c in rec.get("candidates", []):
                    if c["kind"] == chosen["kind"] and c["index"] == chosen["index"]:
                        data.goals.append((c["x"], c["y"], c["kind"]))
                        break
    return data
