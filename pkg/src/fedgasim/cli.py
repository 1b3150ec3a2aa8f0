"""Command-line entry point.

    fedgasim run --config exp.json [--output DIR] [--seeds 0..4] [--method M]
    fedgasim compare <summary_a> <summary_b> [--output DIR]

Exit codes: 0 ok, 1 configuration, 2 data, 3 numeric, 4 I/O.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import report, runner
from .config import parse_config, parse_method
from .errors import ConfigError, FedgasimError


def parse_seeds(text: str) -> list[int]:
    """Accept "0..4" (inclusive range) or a comma list like "0,3,7"."""
    text = text.strip()
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            lo, hi = int(lo), int(hi)
            if hi < lo:
                raise ValueError
            return list(range(lo, hi + 1))
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"--seeds: cannot parse {text!r} (use 0..4 or 0,1,2)") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedgasim",
        description="Deterministic federated-learning simulator with gradient alignment.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run an experiment config across its seeds")
    run_p.add_argument("--config", required=True, help="path to the JSON experiment config")
    run_p.add_argument("--output", help="output directory (overrides config.output_dir)")
    run_p.add_argument("--seeds", help="seed override, e.g. 0..4 or 0,1,2")
    run_p.add_argument("--method", help="method override: fedavg, fedprox[:mu], fedga")

    cmp_p = sub.add_parser("compare", help="compare two method summaries")
    cmp_p.add_argument("summary_a", help="reference summary.json (or its run directory)")
    cmp_p.add_argument("summary_b", help="summary.json (or run directory) to compare")
    cmp_p.add_argument("--output", help="directory for compare.json and the figure")
    return parser


def cmd_run(args) -> int:
    try:
        raw = Path(args.config).read_bytes()
    except FileNotFoundError:
        print(f"error: config file not found: {args.config}", file=sys.stderr)
        return 1
    cfg = parse_config(raw)
    if args.output:
        cfg.output_dir = args.output
    if args.seeds:
        cfg.seeds = parse_seeds(args.seeds)
    if args.method:
        cfg.method = parse_method(args.method)
    summary = runner.run(cfg)
    print(
        f"{summary['method']}: accuracy {summary['accuracy_mean']:.4f} "
        f"(std {summary['accuracy_std']:.4f}), macro-F1 {summary['macro_f1_mean']:.4f} "
        f"(std {summary['macro_f1_std']:.4f}) over {len(cfg.seeds)} seed(s)"
    )
    print(f"artifacts under {Path(cfg.output_dir).resolve()}")
    return 0


def cmd_compare(args) -> int:
    summary_a = runner.load_summary(args.summary_a)
    summary_b = runner.load_summary(args.summary_b)
    rep = runner.compare(summary_a, summary_b)
    print(f"reference: {rep.method_a}   compared: {rep.method_b}")
    print(f"accuracy margin ({rep.method_b} - {rep.method_a}): {rep.accuracy_margin:+.4f}")
    print(f"macro-F1 margin ({rep.method_b} - {rep.method_a}): {rep.macro_f1_margin:+.4f}")
    print(f"target accuracy (90% of {rep.method_a} best): {rep.target_accuracy:.4f}")
    ra = "never" if rep.rounds_a is None else str(rep.rounds_a)
    rb = "never" if rep.rounds_b is None else str(rep.rounds_b)
    print(f"rounds to target: {rep.method_a} {ra}, {rep.method_b} {rb}")
    if rep.speedup is None:
        print("speedup: not defined (target not reached)")
    else:
        print(f"speedup: {rep.speedup:.2f}x")
    if args.output:
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        (out / "compare.json").write_text(json.dumps(rep.to_dict(), indent=2) + "\n")
        report.render_compare_figure(out / "compare_accuracy.png", summary_a, summary_b)
        print(f"report written to {out.resolve()}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args)
        return cmd_compare(args)
    except FedgasimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
