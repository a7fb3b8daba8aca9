"""Deterministic report artifacts: CSV, aligned text table, chart data, SVG.

Re-emitting the same report object overwrites every file with identical
bytes. Wall-clock timings go to their own file and are the only volatile
output; everything else depends solely on the report's values.
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict

from ..errors import ConfigError
from ..evaluation import ConfigScore
from ..util import format_float
from .families import SECTION_LABELS
from .runner import BenchmarkReport, FamilyResult

_CSV_COLUMNS = (
    "family", "label", "section", "budget", "status", "rmse", "pct_rmse",
    "mae", "pct_mae", "r2", "roc_auc", "f1_macro", "f1_weighted",
    "precision_macro", "recall_macro", "balanced_accuracy", "flags",
    "chosen", "cv_mean_rmse", "seed", "reason",
)

_FLOAT_FIELDS = (
    "rmse", "pct_rmse", "mae", "pct_mae", "r2", "roc_auc", "f1_macro",
    "f1_weighted", "precision_macro", "recall_macro", "balanced_accuracy",
    "cv_mean_rmse",
)


def _stem(report: BenchmarkReport) -> str:
    return "ablation" if report.kind == "ablation" else "report"


def _fmt(value: float, digits: int = 4) -> str:
    if isinstance(value, float) and math.isnan(value):
        return "--"
    return f"{value:.{digits}f}"


def write_report_csv(report: BenchmarkReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_CSV_COLUMNS)
        for row in report.rows:
            flags = ";".join(row.metric_flags + row.screening_flags)
            record = {
                "family": row.family,
                "label": row.label,
                "section": row.section,
                "budget": row.budget,
                "status": row.status,
                "flags": flags,
                "chosen": row.chosen,
                "seed": str(row.seed),
                "reason": row.reason,
            }
            for name in _FLOAT_FIELDS:
                record[name] = format_float(getattr(row, name))
            writer.writerow([record[c] for c in _CSV_COLUMNS])


def render_text_table(report: BenchmarkReport) -> str:
    lines = []
    title = "Benchmark report" if report.kind == "benchmark" else "SPD ablation report"
    lines.append(f"{title} :: target {report.target}")
    lines.append(
        f"subjects n={report.n_subjects} (train {report.n_train} / test {report.n_test})"
        f" | split seed {report.split_seed} | cv seed {report.cv_seed}"
        f" | {report.cv_folds}-fold CV"
    )
    lines.append(
        f"screening: tau={_fmt(report.tau)} "
        f"({_fmt(report.kappa, 2)} x {report.statistic} of Sham train), "
        f"positive class: {report.positive_class}"
    )
    lines.append("compact columns: " + ", ".join(report.compact_columns))
    lines.append(
        f"leakage audit: {report.leakage_checks} checks, "
        f"{len(report.leakage_violations)} violations"
    )
    lines.append("")

    width = max(len(r.label) for r in report.rows) + 2
    header = (
        f"{'Model':<{width}}{'RMSE':>10}{'%RMSE':>9}{'MAE':>10}"
        f"{'R2':>9}{'ROC-AUC':>9}{'BalAcc':>9}"
    )
    lines.append(header)
    lines.append("-" * len(header))
    section = None
    for row in report.rows:
        if row.section != section:
            section = row.section
            lines.append(f"[{SECTION_LABELS.get(section, section)}]")
        if row.status != "ok":
            lines.append(f"{row.label:<{width}}failed: {row.reason}")
            continue
        lines.append(
            f"{row.label:<{width}}{_fmt(row.rmse):>10}{_fmt(row.pct_rmse, 2):>9}"
            f"{_fmt(row.mae):>10}{_fmt(row.r2):>9}{_fmt(row.roc_auc):>9}"
            f"{_fmt(row.balanced_accuracy):>9}"
        )
    lines.append("")
    return "\n".join(lines)


def write_chart_data(report: BenchmarkReport, path) -> None:
    """Model name, RMSE, ROC-AUC per ok row, in report (family) order."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["label", "rmse", "roc_auc"])
        for row in report.rows:
            if row.status != "ok":
                continue
            writer.writerow([row.label, format_float(row.rmse), format_float(row.roc_auc)])


def render_svg_chart(report: BenchmarkReport) -> str:
    """Self-contained horizontal bar chart of test RMSE per model."""
    rows = [r for r in report.rows if r.status == "ok" and not math.isnan(r.rmse)]
    bar_h, gap, left, right_pad, top = 18, 6, 280, 90, 50
    width = 720
    height = top + len(rows) * (bar_h + gap) + 20
    scale_max = max((r.rmse for r in rows), default=1.0) or 1.0
    span = width - left - right_pad
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="monospace" font-size="12">',
        f'<text x="10" y="20" font-size="14">Test RMSE by model :: {report.target}</text>',
        f'<text x="10" y="36" fill="#555">tau={_fmt(report.tau)} | '
        f'n_test={report.n_test}</text>',
    ]
    for i, row in enumerate(rows):
        y = top + i * (bar_h + gap)
        w = max(1.0, span * row.rmse / scale_max)
        parts.append(
            f'<text x="{left - 6}" y="{y + 13}" text-anchor="end">{row.label}</text>'
        )
        parts.append(
            f'<rect x="{left}" y="{y}" width="{w:.2f}" height="{bar_h}" fill="#4878a8"/>'
        )
        parts.append(
            f'<text x="{left + w + 4:.2f}" y="{y + 13}">{_fmt(row.rmse)}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_cv_tables(report: BenchmarkReport, outdir) -> list:
    paths = []
    for family in sorted(report.cv_scores):
        scores = report.cv_scores[family]
        if not scores:
            continue
        n_folds = len(scores[0].fold_rmse)
        path = os.path.join(outdir, f"cv_{family}.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(
                ["fingerprint"] + [f"fold_{k}" for k in range(n_folds)] + ["mean", "rank"]
            )
            for row in scores:
                writer.writerow(
                    [row.fingerprint]
                    + [format_float(v) for v in row.fold_rmse]
                    + [format_float(row.mean_rmse), str(row.rank)]
                )
        paths.append(path)
    return paths


def write_timings(report: BenchmarkReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["family", "wall_time_s"])
        for family, seconds in report.timings.items():
            writer.writerow([family, f"{seconds:.3f}"])


def report_to_json(report: BenchmarkReport) -> str:
    payload = asdict(report)
    del payload["timings"]
    payload["cv_scores"] = {
        name: [asdict(s) for s in scores] for name, scores in report.cv_scores.items()
    }
    payload["schema_version"] = 1
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def report_from_json(text: str) -> BenchmarkReport:
    payload = json.loads(text)
    version = payload.pop("schema_version", None)
    if version != 1:
        raise ConfigError(f"unsupported report schema version: {version}")
    rows = tuple(
        FamilyResult(
            **{
                **d,
                "metric_flags": tuple(d["metric_flags"]),
                "screening_flags": tuple(d["screening_flags"]),
            }
        )
        for d in payload.pop("rows")
    )
    cv_scores = {
        name: tuple(
            ConfigScore(**{**d, "fold_rmse": tuple(d["fold_rmse"])}) for d in scores
        )
        for name, scores in payload.pop("cv_scores").items()
    }
    payload["compact_columns"] = tuple(payload["compact_columns"])
    payload["leakage_violations"] = tuple(payload["leakage_violations"])
    return BenchmarkReport(
        rows=rows, cv_scores=cv_scores, timings={}, **payload
    )


def emit_report(report: BenchmarkReport, outdir, formats=("csv", "txt", "chart", "svg", "json", "cv", "timings")) -> list:
    """Write the requested artifact files; returns the paths written."""
    if not report.rows:
        raise ConfigError("report has no rows to emit")
    os.makedirs(outdir, exist_ok=True)
    stem = _stem(report)
    written = []

    def target(name):
        path = os.path.join(outdir, name)
        written.append(path)
        return path

    if "csv" in formats:
        write_report_csv(report, target(f"{stem}.csv"))
    if "txt" in formats:
        with open(target(f"{stem}.txt"), "w") as fh:
            fh.write(render_text_table(report))
    if "chart" in formats:
        write_chart_data(report, target(f"{stem}_chart.csv"))
    if "svg" in formats:
        with open(target(f"{stem}_chart.svg"), "w") as fh:
            fh.write(render_svg_chart(report))
    if "json" in formats:
        with open(target(f"{stem}.json"), "w") as fh:
            fh.write(report_to_json(report))
    if "cv" in formats:
        written.extend(write_cv_tables(report, outdir))
    if "timings" in formats and report.timings:
        write_timings(report, target(f"{stem}_timings.csv"))
    return written
