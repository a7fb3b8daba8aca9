"""Benchmark orchestration: one stratified split, one screening threshold,
grid-search CV per model family, single test evaluation per row.

Every family sees the identical split and threshold. Family evaluations are
independent; a family that fails completely becomes a "failed" report row
and the run continues. Wall times are collected separately from the report
rows so the deterministic artifacts never contain volatile values.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ..data import Cohort, generate_synthetic_cohort, load_cohort, make_split_plan
from ..errors import ConfigError, MuscleBenchError
from ..evaluation import (
    audit_fold_hashes,
    fit_screening_threshold,
    grid_search_cv,
    regression_metrics,
    screening_report,
)
from ..util import derive_seed, index_hash, stable_fingerprint
from .config import TARGETS, RunConfig
from .families import (
    ALPHAS,
    FAMILIES,
    budget_pipeline_config,
    build_grid,
    family_builder,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FamilyResult:
    """One report row; float metrics are NaN when the family failed."""

    family: str
    label: str
    section: str
    budget: str
    status: str
    reason: str = ""
    chosen: str = ""
    chosen_params: dict = field(default_factory=dict)
    cv_mean_rmse: float = float("nan")
    rmse: float = float("nan")
    pct_rmse: float = float("nan")
    mae: float = float("nan")
    pct_mae: float = float("nan")
    r2: float = float("nan")
    y_test_mean: float = float("nan")
    metric_flags: tuple = ()
    roc_auc: float = float("nan")
    f1_macro: float = float("nan")
    f1_weighted: float = float("nan")
    precision_macro: float = float("nan")
    recall_macro: float = float("nan")
    balanced_accuracy: float = float("nan")
    screening_flags: tuple = ()
    seed: int = 0


@dataclass(frozen=True)
class BenchmarkReport:
    """Full outcome of one run; every row shares the split and threshold."""

    kind: str
    target: str
    source: str
    n_subjects: int
    cohort_seed: int
    tau: float
    kappa: float
    statistic: str
    positive_class: str
    test_fraction: float
    split_seed: int
    cv_seed: int
    cv_folds: int
    base_seed: int
    n_train: int
    n_test: int
    train_hash: str
    test_hash: str
    compact_columns: tuple
    rows: tuple
    cv_scores: dict
    leakage_checks: int
    leakage_violations: tuple
    timings: dict


def load_or_generate_cohort(config: RunConfig) -> Cohort:
    if config.source == "synthetic":
        return generate_synthetic_cohort(config.n_subjects, config.cohort_seed)
    return load_cohort(config.source)


def _check_target(cohort: Cohort, target: str) -> np.ndarray:
    y = cohort.target(target)
    missing = np.flatnonzero(np.isnan(y))
    if len(missing):
        raise ConfigError(
            f"target {target!r} is missing for {len(missing)} subjects "
            f"(first rows: {missing[:5].tolist()}); quality needs both weight and force"
        )
    return y


def rank_compact_columns(cohort: Cohort, train_idx, target: str, k: int = 3) -> tuple:
    """Top-k biomarkers by absolute correlation with the target on train rows."""
    train_idx = np.asarray(train_idx, dtype=int)
    y = cohort.target(target, train_idx)
    scores = []
    for name in cohort.feature_names:
        x = cohort.columns((name,), train_idx)[:, 0]
        mask = np.isfinite(x) & np.isfinite(y)
        if mask.sum() < 3 or np.std(x[mask]) == 0.0 or np.std(y[mask]) == 0.0:
            scores.append(0.0)
            continue
        scores.append(abs(float(np.corrcoef(x[mask], y[mask])[0, 1])))
    order = np.argsort(-np.asarray(scores), kind="stable")
    return tuple(cohort.feature_names[i] for i in order[:k])


def _audit_family(gs, pos_folds, plan) -> tuple:
    """Leakage checks for one grid search: returns (n_checks, violations)."""
    checks = 0
    violations = []
    try:
        checks += audit_fold_hashes(gs, pos_folds)
    except MuscleBenchError as exc:
        violations.append(str(exc))
    for rec in gs.records:
        if not rec.reported_hash:
            continue
        checks += 1
        expected = index_hash(plan.folds[rec.fold_index][0])
        if rec.reported_hash != expected:
            violations.append(
                f"config {rec.config_index} fold {rec.fold_index}: pipeline fitted "
                f"on rows other than the fold's training part"
            )
    refit_hash = getattr(gs.best_estimator, "fit_index_hash_", "")
    if refit_hash:
        checks += 1
        if refit_hash != plan.train_hash:
            violations.append("final refit saw rows outside the training split")
    return checks, tuple(violations)


def _evaluate_family(
    *,
    name,
    label,
    section,
    budget,
    make_inner,
    grid,
    use_angles,
    split_condition,
    cohort,
    plan,
    y_all,
    spec_obj,
    compact_columns,
    config,
):
    """Grid-search CV on the training half, one test evaluation, audits."""
    pipe_cfg = budget_pipeline_config(budget, compact_columns, use_angles)
    train_ids = np.asarray(plan.train_idx, dtype=int)
    test_ids = np.asarray(plan.test_idx, dtype=int)
    pos_of = {int(g): p for p, g in enumerate(train_ids)}
    pos_folds = tuple(
        (tuple(pos_of[int(i)] for i in fit), tuple(pos_of[int(i)] for i in val))
        for fit, val in plan.folds
    )
    family_seed = derive_seed(config.base_seed, name, config.target)

    class _Spec:
        pass

    spec_like = _Spec()
    spec_like.make_inner = make_inner
    spec_like.split_condition = split_condition
    builder = family_builder(spec_like, cohort, pipe_cfg)
    X_ids = train_ids.astype(float)[:, None]
    gs = grid_search_cv(
        builder,
        grid,
        X_ids,
        y_all[train_ids],
        pos_folds,
        base_seed=family_seed,
        n_jobs=config.jobs,
        family=name,
    )
    checks, violations = _audit_family(gs, pos_folds, plan)

    pred = np.asarray(gs.best_estimator.predict(test_ids.astype(float)[:, None]), float)
    metrics = regression_metrics(y_all[test_ids], pred)
    screening = screening_report(y_all[test_ids], pred, spec_obj)
    best = gs.scores[gs.best_index]
    row = FamilyResult(
        family=name,
        label=label,
        section=section,
        budget=budget,
        status="ok",
        chosen=stable_fingerprint(gs.best_config),
        chosen_params=dict(gs.best_config),
        cv_mean_rmse=best.mean_rmse,
        rmse=metrics.rmse,
        pct_rmse=metrics.pct_rmse,
        mae=metrics.mae,
        pct_mae=metrics.pct_mae,
        r2=metrics.r2,
        y_test_mean=metrics.y_test_mean,
        metric_flags=metrics.flags,
        roc_auc=screening.roc_auc,
        f1_macro=screening.f1_macro,
        f1_weighted=screening.f1_weighted,
        precision_macro=screening.precision_macro,
        recall_macro=screening.recall_macro,
        balanced_accuracy=screening.balanced_accuracy,
        screening_flags=screening.flags,
        seed=family_seed,
    )
    return row, gs.scores, checks, violations


def _run_rows(config: RunConfig, cohort, row_specs, kind: str) -> BenchmarkReport:
    y_all = _check_target(cohort, config.target)
    plan = make_split_plan(
        cohort, config.test_fraction, config.cv_folds, config.split_seed, config.cv_seed
    )
    train_ids = np.asarray(plan.train_idx, dtype=int)
    spec_obj = config.screening_spec()
    tau = fit_screening_threshold(
        y_all[train_ids], cohort.condition_values(train_ids), spec_obj
    )
    if config.auto_rank_compact:
        compact_columns = rank_compact_columns(cohort, train_ids, config.target)
    else:
        compact_columns = config.compact_columns

    rows = []
    cv_scores = {}
    timings = {}
    total_checks = 0
    all_violations = []
    for name, label, section, budget, make_inner, grid, use_angles, split_cond in row_specs:
        started = time.perf_counter()
        try:
            row, scores, checks, violations = _evaluate_family(
                name=name,
                label=label,
                section=section,
                budget=budget,
                make_inner=make_inner,
                grid=grid,
                use_angles=use_angles,
                split_condition=split_cond,
                cohort=cohort,
                plan=plan,
                y_all=y_all,
                spec_obj=spec_obj,
                compact_columns=compact_columns,
                config=config,
            )
            cv_scores[name] = scores
            total_checks += checks
            all_violations.extend(f"{name}: {v}" for v in violations)
        except Exception as exc:
            log.warning("family %s failed: %s", name, exc)
            row = FamilyResult(
                family=name,
                label=label,
                section=section,
                budget=budget,
                status="failed",
                reason=f"{type(exc).__name__}: {exc}",
                seed=derive_seed(config.base_seed, name, config.target),
            )
        timings[name] = time.perf_counter() - started
        rows.append(row)

    return BenchmarkReport(
        kind=kind,
        target=config.target,
        source=config.source,
        n_subjects=cohort.n,
        cohort_seed=config.cohort_seed,
        tau=tau,
        kappa=config.kappa,
        statistic=config.statistic,
        positive_class=config.positive_class,
        test_fraction=config.test_fraction,
        split_seed=config.split_seed,
        cv_seed=config.cv_seed,
        cv_folds=config.cv_folds,
        base_seed=config.base_seed,
        n_train=len(plan.train_idx),
        n_test=len(plan.test_idx),
        train_hash=plan.train_hash,
        test_hash=index_hash(plan.test_idx),
        compact_columns=tuple(compact_columns),
        rows=tuple(rows),
        cv_scores=cv_scores,
        leakage_checks=total_checks,
        leakage_violations=tuple(all_violations),
        timings=timings,
    )


def run_benchmark(config: RunConfig, cohort: Cohort | None = None) -> BenchmarkReport:
    """Execute the full protocol for one target across the enabled families."""
    cohort = cohort if cohort is not None else load_or_generate_cohort(config)
    row_specs = []
    for name in config.families:
        spec = FAMILIES[name]
        budget = spec.budget if config.budget == "per_family" else config.budget
        grid = build_grid(spec, config.grid_overrides.get(name))
        row_specs.append(
            (name, spec.label, spec.section, budget, spec.make_inner, grid,
             spec.use_angles, spec.split_condition)
        )
    return _run_rows(config, cohort, row_specs, kind="benchmark")


@dataclass(frozen=True)
class AblationRow:
    """One SPD configuration to evaluate under the shared protocol."""

    key: str
    label: str
    axes: tuple

    def grid(self) -> list:
        import itertools

        axes = dict(self.axes)
        keys = list(axes)
        return [dict(zip(keys, combo)) for combo in itertools.product(*axes.values())]


_SPD_ABLATION_ALPHAS = (1e-2, 1e-1, 1.0, 10.0)

DEFAULT_ABLATION_GRID = (
    AblationRow(
        "spd_ridge_base",
        "Ridge baseline (biomarkers only)",
        (("n_medoids", (0,)), ("alpha", ALPHAS)),
    ),
    AblationRow(
        "ablate_outer_k3",
        "Ridge + SPD distances (outer-product, K=3, no synthetic)",
        (("n_medoids", (3,)), ("normalize", (False,)), ("n_syn", (0,)),
         ("alpha", _SPD_ABLATION_ALPHAS)),
    ),
    AblationRow(
        "ablate_outer_best",
        "Ridge + SPD distances (outer-product; best, no synthetic)",
        (("n_medoids", (2, 3, 4, 6)), ("normalize", (False, True)), ("n_syn", (0,)),
         ("alpha", _SPD_ABLATION_ALPHAS)),
    ),
    AblationRow(
        "ablate_local_k6",
        "Ridge + SPD distances (local covariance, K=6, k=8, no synthetic)",
        (("descriptor", ("local_cov",)), ("n_medoids", (6,)), ("knn", (8,)),
         ("n_syn", (0,)), ("alpha", _SPD_ABLATION_ALPHAS)),
    ),
)


def run_ablation(config: RunConfig, cohort: Cohort | None = None,
                 grid=DEFAULT_ABLATION_GRID) -> BenchmarkReport:
    """SPD configuration sweep under the same split and threshold.

    The baseline row reuses the benchmark's SPD-baseline family key, grid,
    and derived seed, so its report row is bit-identical to that family's
    row from run_benchmark on the same config.
    """
    if not grid:
        raise ConfigError("ablation grid is empty")
    cohort = cohort if cohort is not None else load_or_generate_cohort(config)
    spd = FAMILIES["spd_ridge"]
    row_specs = [
        (row.key, row.label, "ablation", spd.budget, spd.make_inner, row.grid(),
         spd.use_angles, spd.split_condition)
        for row in grid
    ]
    return _run_rows(config, cohort, row_specs, kind="ablation")


def run_full_benchmark(config: RunConfig, targets=TARGETS) -> dict:
    """One report per target on a single shared cohort."""
    from dataclasses import replace

    cohort = load_or_generate_cohort(config)
    reports = {}
    for target in targets:
        reports[target] = run_benchmark(replace(config, target=target), cohort)
    return reports
