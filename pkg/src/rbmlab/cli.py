"""Command-line entry point.

    rbmlab <experiment> --config <path> [--out <path>] [--csv <path>] [--seed <u64>]
    rbmlab simulate --config <path> [--out <path>] [--record trajectory|summary]
    rbmlab oracle --params <path> --n <int> --t <real> [--p <int> --tau <real>]

Exit codes: 0 success, 2 malformed config/arguments, 3 one or more
non-advisory verdicts failed (the failures are listed on stderr).
"""
from __future__ import annotations

import argparse
import json
import sys
from typing import Optional

import numpy as np

from .config import AppConfig, load_config
from .errors import CapacityError, ConfigError, RbmlabError, ValidationError
from .harness import EXPERIMENTS, _linear_params, oracle_table, run_experiment, write_points_csv
from .models import build_model
from .sim import simulate, write_summary_csv, write_trajectory_csv


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rbmlab",
        description="Random-batch particle-system simulation and verification toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    for kind in EXPERIMENTS:
        sp = sub.add_parser(kind, help=f"run the {kind} experiment")
        sp.add_argument("--config", help="TOML config file")
        sp.add_argument("--out", help="write the JSON report here (default: stdout)")
        sp.add_argument("--csv", help="write the point table as CSV")
        sp.add_argument("--seed", type=int, help="override every configured seed")
        if kind == "verify-batching":
            sp.add_argument("--n", type=int, help="particle count")
            sp.add_argument("--p", type=int, help="batch size")
            sp.add_argument("--i", type=int, help="anchor particle (default: all)")
            sp.add_argument("--samples", type=int, help="chi-square sample count (0 disables)")
        if kind == "hierarchy":
            sp.add_argument("--gamma", type=float)
            sp.add_argument("--kmax", type=int)
            sp.add_argument("--lmax", type=int)
            sp.add_argument("--t", help="time grid: 'start:stop:count' or comma list")

    sp = sub.add_parser("simulate", help="run one scheme and emit CSV")
    sp.add_argument("--config", required=True, help="TOML config with [model] and [sim]")
    sp.add_argument("--out", help="output CSV path (default: stdout)")
    sp.add_argument(
        "--record",
        choices=("summary", "trajectory"),
        default="summary",
        help="summary: per-checkpoint moment stats; trajectory: all coordinates",
    )
    sp.add_argument("--seed", type=int, help="override the configured seed")

    sp = sub.add_parser("oracle", help="closed-form covariance tables (linear family)")
    sp.add_argument("--params", required=True, help="TOML file with a linear [model] section")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--t", type=float, required=True)
    sp.add_argument("--p", type=int)
    sp.add_argument("--tau", type=float)
    sp.add_argument("--out", help="write the JSON table here (default: stdout)")
    return parser


def _parse_grid(text: str) -> list:
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"grid must be start:stop:count, got {text!r}")
        start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
        return [float(x) for x in np.linspace(start, stop, count)]
    return [float(x) for x in text.split(",")]


def _experiment_command(kind: str, args) -> int:
    config = load_config(args.config) if args.config else AppConfig(None, None, {})
    overrides = {}
    if kind == "verify-batching":
        if args.n is not None:
            overrides["n"] = args.n
        if args.p is not None:
            overrides["p"] = args.p
        if args.i is not None:
            overrides["anchors"] = [args.i]
        if args.samples is not None:
            overrides["samples"] = args.samples
    if kind == "hierarchy":
        if args.gamma is not None:
            overrides["gamma"] = args.gamma
        if args.kmax is not None:
            overrides["k_max"] = args.kmax
        if args.lmax is not None:
            overrides["l_max"] = args.lmax
        if args.t is not None:
            overrides["t_grid"] = _parse_grid(args.t)
    if overrides:
        config = AppConfig(config.model, config.sim, {**config.experiment, **overrides})

    report = run_experiment(kind, config, seed=args.seed)
    text = report.to_json()
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if args.csv:
        write_points_csv(report.point_table or report.points, args.csv)
    failing = report.failing()
    if failing:
        for v in failing:
            print(
                f"FAIL {v.criterion}: measured {v.measured}; required {v.tolerance}",
                file=sys.stderr,
            )
        return 3
    return 0


def _simulate_command(args) -> int:
    config = load_config(args.config)
    if config.model is None or config.sim is None:
        raise ConfigError("simulate needs [model] and [sim] sections")
    if args.seed is not None:
        config = config.with_seed(args.seed)
    model = build_model(config.model)
    record = "moments" if args.record == "summary" else "trajectory"
    result = simulate(config.sim, model, record=record)
    sink = args.out if args.out else sys.stdout
    if args.record == "summary":
        write_summary_csv(result, sink)
    else:
        write_trajectory_csv(result, sink)
    return 0


def _oracle_command(args) -> int:
    config = load_config(args.params)
    params = _linear_params(config.model)
    table = oracle_table(params, args.n, args.t, p=args.p, tau=args.tau)
    text = json.dumps(table, sort_keys=True, indent=2) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def main(argv: Optional[list] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            return _simulate_command(args)
        if args.command == "oracle":
            return _oracle_command(args)
        return _experiment_command(args.command, args)
    except (ConfigError, ValidationError, CapacityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RbmlabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
