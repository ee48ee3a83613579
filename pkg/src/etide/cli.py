"""Command line entry point: ``etide {run,suite,compare,trace}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import benchfn, harness


def _cmd_run(args) -> int:
    if not args.config:
        raise harness.ConfigError("run needs --config")
    cfg = harness.ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg.master_seed = args.seed
    out = args.out or cfg.out
    if not out:
        raise harness.ConfigError("no output directory; pass --out or set 'out' in the config")
    result = harness.run_experiment(cfg, jobs=args.jobs, out=out)
    print(f"{len(result.records)} runs written to {out}")
    if result.failures:
        print(f"{len(result.failures)} cell(s) failed, see {Path(out) / 'failures.jsonl'}", file=sys.stderr)
        return 1
    return 0


def _cmd_suite(args) -> int:
    print(benchfn.manifest_json(args.seed, args.dim))
    return 0


def _cmd_compare(args) -> int:
    if not args.out:
        raise harness.ConfigError("compare needs --out <experiment dir>")
    result = harness.compare_records(args.out, args.dest)
    sys.stdout.write(result.wtl_csv)
    return 0


def _cmd_trace(args) -> int:
    if not args.out:
        raise harness.ConfigError("trace needs --out <experiment dir>")
    for rec in harness.load_records(Path(args.out) / "records"):
        if rec.algorithm == args.algorithm and rec.function == args.function and rec.run == args.run:
            print("fes,best_error")
            for fes, err in rec.curve:
                print(f"{fes},{err!r}")
            return 0
    raise harness.ConfigError(f"no record for {args.algorithm} / {args.function} / run {args.run}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="etide", description="DE with event-triggered impulses: experiments and reports")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute an experiment from a JSON config")
    p.add_argument("--config", help="experiment config (JSON)")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("suite", help="print the benchmark suite manifest")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--dim", type=int, default=10)
    p.set_defaults(func=_cmd_suite)

    p = sub.add_parser("compare", help="recompute the tables from stored run records")
    p.add_argument("--out", help="experiment directory holding records/")
    p.add_argument("--dest", help="write tables here instead of the experiment directory")
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("trace", help="dump one run's convergence curve as CSV")
    p.add_argument("--out", help="experiment directory holding records/")
    p.add_argument("--algorithm", required=True)
    p.add_argument("--function", required=True)
    p.add_argument("--run", type=int, default=0)
    p.set_defaults(func=_cmd_trace)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) is not None and getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be >= 1")
    try:
        return args.func(args)
    except (harness.ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"etide {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
