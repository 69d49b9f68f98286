"""Batch figure generation from a directory of benchmark artifacts."""

from __future__ import annotations

import argparse
import hashlib
import os
import re

from .curves import render_curves
from .io import discover_episodes, read_episode_log, read_greymap
from .maps import render_map

LOG_RE = re.compile(r"(episode_[A-Za-z]+_seed\d+_[0-9a-f]+)\.log$")


def run_report(in_dir: str, figs: list, out_dir: str, fmt: str = "raster", scale: int = 3) -> list:
    """Render the requested figure groups; returns the written file paths."""
    written = []
    os.makedirs(out_dir, exist_ok=True)
    if "curves" in figs:
        episodes = discover_episodes(in_dir)
        suffix = "svg" if fmt == "vector" else "png"
        path = os.path.join(out_dir, "curves.%s" % suffix)
        render_curves(episodes, path, fmt=fmt)
        written.append(path)
    if "maps" in figs:
        for name in sorted(os.listdir(in_dir)):
            m = LOG_RE.match(name)
            if not m:
                continue
            base = m.group(1)
            pgm = os.path.join(in_dir, base + ".pgm")
            if not os.path.exists(pgm):
                continue
            grey = read_greymap(pgm)
            log = read_episode_log(os.path.join(in_dir, name))
            path = os.path.join(out_dir, "map_%s.png" % base)
            render_map(grey, log, path, scale=scale)
            written.append(path)
    return written


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="uwexplore-report", description=__doc__)
    ap.add_argument("--in", dest="in_dir", required=True, help="suite output directory")
    ap.add_argument("--figs", default="curves,maps", help="comma list: curves, maps")
    ap.add_argument("--out", dest="out_dir", required=True)
    ap.add_argument("--format", choices=("raster", "vector"), default="raster")
    ap.add_argument("--scale", type=int, default=3, help="pixels per map cell")
    args = ap.parse_args(argv)
    figs = [f.strip() for f in args.figs.split(",") if f.strip()]
    written = run_report(args.in_dir, figs, args.out_dir, args.format, args.scale)
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
