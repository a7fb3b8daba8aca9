"""Benchmark orchestration: configs, family registry, runner, reports, CLI."""
from .cli import main
from .config import RunConfig, config_summary, load_run_config
from .families import FAMILIES, FAMILY_ORDER, CohortModel, build_grid
from .report import emit_report, report_from_json, report_to_json
from .runner import (
    BenchmarkReport,
    FamilyResult,
    rank_compact_columns,
    run_ablation,
    run_benchmark,
    run_full_benchmark,
)

__all__ = [
    "BenchmarkReport",
    "CohortModel",
    "FAMILIES",
    "FAMILY_ORDER",
    "FamilyResult",
    "RunConfig",
    "build_grid",
    "config_summary",
    "emit_report",
    "load_run_config",
    "main",
    "rank_compact_columns",
    "report_from_json",
    "report_to_json",
    "run_ablation",
    "run_benchmark",
    "run_full_benchmark",
]
