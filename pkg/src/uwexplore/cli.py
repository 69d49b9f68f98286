"""Command-line entry point: run one episode, a suite, or recompute metrics."""

from __future__ import annotations

import argparse
import os
import sys

from .config import RunConfig, apply_overrides, load_config
from .episode import EpisodeLog, config_fingerprint, run_episode
from .metrics import compute_metrics, series_to_csv
from .suite import SuiteConfig, parse_suite_config, run_suite
from .world import bundled_world, load_world


def _resolve_world(name_or_path: str):
    if os.path.exists(name_or_path):
        return load_world(name_or_path)
    return bundled_world(name_or_path)


def cmd_run(args) -> int:
    world = _resolve_world(args.world)
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = dict(kv.split("=", 1) for kv in args.set or [])
    apply_overrides(cfg, overrides)
    cfg.planner.policy = args.policy
    log = run_episode(world, cfg, args.seed, args.start, args.budget)
    os.makedirs(args.out, exist_ok=True)
    fp = config_fingerprint(world, cfg, args.seed, args.start)
    base = os.path.join(args.out, "episode_%s_seed%03d_%s" % (args.policy, args.seed, fp))
    with open(base + ".log", "w", encoding="utf-8") as fh:
        fh.write(log.to_text())
    with open(base + ".pgm", "wb") as fh:
        fh.write(log.grid_bytes)
    series = compute_metrics(log, world)
    with open(base + ".csv", "w", encoding="utf-8") as fh:
        fh.write(series_to_csv(series))
    print("episode finished: %s (%s)" % (base, log.terminated))
    return 0 if log.terminated != "failed" else 1


def cmd_suite(args) -> int:
    with open(args.config, "r", encoding="utf-8") as fh:
        sc = parse_suite_config(fh.read())
    if args.out:
        sc.out_dir = args.out
    if args.workers:
        sc.workers = args.workers
    run_suite(sc)
    print("suite artifacts written to %s" % sc.out_dir)
    return 0


def cmd_metrics(args) -> int:
    with open(args.log, "r", encoding="utf-8") as fh:
        log = EpisodeLog.from_text(fh.read())
    world = _resolve_world(args.world) if args.world else None
    series = compute_metrics(log, world, total_box_cells=args.box_cells)
    text = series_to_csv(series)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="uwexplore", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a single exploration episode")
    p.add_argument("--world", default="landmarks40", help="bundled world name or file path")
    p.add_argument("--policy", default="EM", choices=("NF", "NBV", "Heuristic", "EM"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--start", type=int, default=0)
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--config", default=None, help="key-value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override")
    p.add_argument("--out", default="episode_out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("suite", help="run a multi-seed policy benchmark")
    p.add_argument("--config", required=True, help="suite config file")
    p.add_argument("--out", default=None)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_suite)

    p = sub.add_parser("metrics", help="recompute metrics from a stored episode log")
    p.add_argument("--log", required=True)
    p.add_argument("--world", default=None)
    p.add_argument("--box-cells", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_metrics)

    args = ap.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
