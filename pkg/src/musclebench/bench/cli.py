"""Command line interface.

Subcommands
-----------
run     fit and score the model families on one target (or all three)
ablate  run the SPD feature ablation table
synth   generate a synthetic cohort CSV
report  re-render output files from a saved report.json
"""
from __future__ import annotations

import argparse
import dataclasses
import os
import sys

from ..data import TARGET_COLUMNS, generate_synthetic_cohort, save_cohort
from ..errors import ConfigError, MuscleBenchError
from .config import RunConfig, load_run_config
from .report import emit_report, report_from_json
from .runner import run_ablation, run_benchmark, run_full_benchmark


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="musclebench",
        description="Benchmark regression model families on muscle recovery data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run the benchmark")
    run_p.add_argument("--config", help="INI config file")
    run_p.add_argument(
        "--target", choices=list(TARGET_COLUMNS) + ["all"], help="target column"
    )
    run_p.add_argument("--seed", type=int, help="master seed (cohort and search)")
    run_p.add_argument("--out", help="output directory")
    run_p.add_argument("--families", help="comma-separated family subset")
    run_p.add_argument("--jobs", type=int, help="parallel CV workers")

    abl_p = sub.add_parser("ablate", help="run the SPD ablation table")
    abl_p.add_argument("--config", help="INI config file")
    abl_p.add_argument("--target", choices=list(TARGET_COLUMNS), help="target column")
    abl_p.add_argument("--seed", type=int, help="master seed (cohort and search)")
    abl_p.add_argument("--out", help="output directory")
    abl_p.add_argument("--jobs", type=int, help="parallel CV workers")

    syn_p = sub.add_parser("synth", help="write a synthetic cohort CSV")
    syn_p.add_argument("--n", type=int, default=213, help="number of subjects")
    syn_p.add_argument("--seed", type=int, default=7, help="cohort seed")
    syn_p.add_argument("--out", default="cohort.csv", help="output CSV path")

    rep_p = sub.add_parser("report", help="re-render artifacts from report.json")
    rep_p.add_argument("--out", required=True, help="directory holding report.json")
    return parser


def _load_config(args) -> RunConfig:
    config = load_run_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        config.cohort_seed = args.seed
        config.base_seed = args.seed
    if getattr(args, "target", None) and args.target != "all":
        config.target = args.target
    if args.out:
        config.outdir = args.out
    if getattr(args, "families", None):
        config.families = tuple(p.strip() for p in args.families.split(","))
    if getattr(args, "jobs", None) is not None:
        config.jobs = args.jobs
    # replace() re-runs validation over the merged flag/file values
    return dataclasses.replace(config)


def _cmd_run(args) -> int:
    config = _load_config(args)
    if args.target == "all":
        reports = run_full_benchmark(config)
        for target, report in reports.items():
            emit_report(report, os.path.join(config.outdir, target))
            print(f"[{target}] wrote report to {os.path.join(config.outdir, target)}")
        return 0
    report = run_benchmark(config)
    emit_report(report, config.outdir)
    print(f"wrote report to {config.outdir}")
    return 0


def _cmd_ablate(args) -> int:
    config = _load_config(args)
    report = run_ablation(config)
    emit_report(report, config.outdir)
    print(f"wrote ablation to {config.outdir}")
    return 0


def _cmd_synth(args) -> int:
    cohort = generate_synthetic_cohort(args.n, seed=args.seed)
    parent = os.path.dirname(args.out)
    if parent:
        os.makedirs(parent, exist_ok=True)
    save_cohort(cohort, args.out)
    print(f"wrote {cohort.n} subjects to {args.out}")
    return 0


def _cmd_report(args) -> int:
    for stem in ("report", "ablation"):
        path = os.path.join(args.out, f"{stem}.json")
        if os.path.exists(path):
            with open(path) as fh:
                report = report_from_json(fh.read())
            emit_report(report, args.out, formats=("csv", "txt", "chart", "svg", "cv"))
            print(f"re-rendered {stem} artifacts in {args.out}")
            return 0
    raise ConfigError(f"no report.json or ablation.json under {args.out}")


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "ablate": _cmd_ablate,
        "synth": _cmd_synth,
        "report": _cmd_report,
    }
    try:
        return handlers[args.command](args)
    except MuscleBenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
