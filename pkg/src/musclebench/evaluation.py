"""Regression metrics in original units, Sham-referenced screening, and the
grid-search cross-validation harness.

Regression metrics follow the usual definitions with R-squared computed
against the test-set mean. Screening converts a continuous target into a
binary label via a threshold fitted on Sham training subjects only; the same
threshold labels both truth and predictions. ROC-AUC uses midrank tie
handling, which matches the pair-counting definition exactly.
"""
from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, replace

import numpy as np
from joblib import Parallel, delayed
from scipy.stats import rankdata

from .data import SHAM
from .errors import ConfigError, FitError, ProtocolError, SplitError
from .util import (
    as_float_vector,
    derive_seed,
    format_float,
    index_hash,
    stable_fingerprint,
)

log = logging.getLogger(__name__)

STATISTICS = ("mean", "median")
POSITIVE_CLASSES = ("low", "high")


@dataclass(frozen=True)
class RegressionMetrics:
    """Test-set regression summary in original units.

    `flags` names any undefined entries (reported as NaN): R-squared when the
    test targets have zero variance, percent errors when their mean is zero.
    """

    rmse: float
    mae: float
    r2: float
    pct_rmse: float
    pct_mae: float
    y_test_mean: float
    flags: tuple = ()


def regression_metrics(y, yhat) -> RegressionMetrics:
    y = as_float_vector(y)
    yhat = as_float_vector(yhat, "yhat")
    if len(y) != len(yhat):
        raise ValueError(f"length mismatch: {len(y)} targets vs {len(yhat)} predictions")
    if len(y) < 2:
        raise ValueError("regression metrics need at least 2 test subjects")
    err = yhat - y
    rmse = float(np.sqrt(np.mean(err**2)))
    mae = float(np.mean(np.abs(err)))
    mean_y = float(np.mean(y))
    ss_tot = float(np.sum((y - mean_y) ** 2))
    flags = []
    if ss_tot == 0.0:
        r2 = float("nan")
        flags.append("r2_undefined_zero_variance")
    else:
        r2 = 1.0 - float(np.sum(err**2)) / ss_tot
    if mean_y == 0.0:
        pct_rmse = pct_mae = float("nan")
        flags.append("pct_undefined_zero_mean")
    else:
        pct_rmse = 100.0 * rmse / mean_y
        pct_mae = 100.0 * mae / mean_y
    return RegressionMetrics(rmse, mae, r2, pct_rmse, pct_mae, mean_y, tuple(flags))


@dataclass
class ScreeningSpec:
    """Rule turning a continuous target into a screening label.

    The threshold tau = kappa * statistic(Sham training targets) is fitted
    once per split and reused verbatim for truth, predictions, and every
    model evaluated on that split.
    """

    kappa: float = 0.8
    statistic: str = "mean"
    positive_class: str = "low"
    tau: float | None = None

    def __post_init__(self):
        if not np.isfinite(self.kappa) or self.kappa <= 0:
            raise ConfigError(f"kappa must be a positive real, got {self.kappa}")
        if self.statistic not in STATISTICS:
            raise ConfigError(
                f"statistic must be one of {STATISTICS}, got {self.statistic!r}"
            )
        if self.positive_class not in POSITIVE_CLASSES:
            raise ConfigError(
                f"positive_class must be one of {POSITIVE_CLASSES}, got {self.positive_class!r}"
            )


def fit_screening_threshold(y_train, condition_train, spec: ScreeningSpec) -> float:
    """Fit tau from Sham training targets; stores it on the spec."""
    y = as_float_vector(y_train, "y_train")
    cond = np.asarray(condition_train, dtype=int)
    if len(y) != len(cond):
        raise ValueError(
            f"length mismatch: {len(y)} targets vs {len(cond)} condition codes"
        )
    sham = y[cond == SHAM]
    if len(sham) == 0:
        raise ProtocolError(
            "screening threshold requires at least one Sham subject in the training split"
        )
    stat = float(np.mean(sham)) if spec.statistic == "mean" else float(np.median(sham))
    spec.tau = float(spec.kappa * stat)
    return spec.tau


def _require_tau(spec: ScreeningSpec) -> float:
    if spec.tau is None:
        raise ProtocolError("screening threshold is not fitted; call fit_screening_threshold")
    return spec.tau


def _threshold_labels(values: np.ndarray, spec: ScreeningSpec) -> np.ndarray:
    # boundary value equal to tau counts as positive in both directions
    tau = _require_tau(spec)
    if spec.positive_class == "low":
        return (values <= tau).astype(int)
    return (values >= tau).astype(int)


def screening_labels(y, spec: ScreeningSpec) -> np.ndarray:
    """Binary truth labels from observed targets."""
    return _threshold_labels(as_float_vector(y), spec)


def prediction_labels(yhat, spec: ScreeningSpec) -> np.ndarray:
    """Binary predicted labels from regression outputs, same threshold."""
    return _threshold_labels(as_float_vector(yhat, "yhat"), spec)


def screening_scores(yhat, spec: ScreeningSpec) -> np.ndarray:
    """Continuous ranking score: larger means stronger evidence of positive."""
    yhat = as_float_vector(yhat, "yhat")
    return -yhat if spec.positive_class == "low" else yhat.copy()


def roc_auc(scores, labels) -> float:
    """Probability a random positive outranks a random negative, ties half.

    Single-class labels make the quantity undefined; returns NaN and warns
    with the class counts.
    """
    scores = as_float_vector(scores, "scores")
    labels = np.asarray(labels, dtype=int)
    if len(scores) != len(labels):
        raise ValueError(f"length mismatch: {len(scores)} scores vs {len(labels)} labels")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be binary 0/1")
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        warnings.warn(
            f"ROC-AUC undefined: one class is empty (positives={n_pos}, negatives={n_neg})",
            RuntimeWarning,
            stacklevel=2,
        )
        return float("nan")
    ranks = rankdata(scores)
    pos_rank_sum = float(ranks[labels == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


@dataclass(frozen=True)
class ScreeningMetrics:
    """Screening summary; every defined entry lies in [0, 1]."""

    roc_auc: float
    f1_macro: float
    f1_weighted: float
    precision_macro: float
    recall_macro: float
    balanced_accuracy: float
    flags: tuple = ()


def classification_report(pred_labels, true_labels) -> ScreeningMetrics:
    """Per-class precision/recall/F1 aggregates with the 0/0 -> 0 convention.

    Classes are always {0, 1}; an absent class contributes zero recall and
    zero weight. ROC-AUC is not computed here and is reported as NaN.
    """
    pred = np.asarray(pred_labels, dtype=int)
    true = np.asarray(true_labels, dtype=int)
    if len(pred) != len(true):
        raise ValueError(f"length mismatch: {len(pred)} predictions vs {len(true)} labels")
    if len(true) == 0:
        raise ValueError("classification report needs at least one subject")

    def safe_div(num, den):
        return num / den if den else 0.0

    precisions, recalls, f1s, supports = [], [], [], []
    for cls in (0, 1):
        tp = int(np.sum((pred == cls) & (true == cls)))
        predicted = int(np.sum(pred == cls))
        actual = int(np.sum(true == cls))
        p = safe_div(tp, predicted)
        r = safe_div(tp, actual)
        f1 = safe_div(2.0 * p * r, p + r)
        precisions.append(p)
        recalls.append(r)
        f1s.append(f1)
        supports.append(actual)
    n = len(true)
    return ScreeningMetrics(
        roc_auc=float("nan"),
        f1_macro=float(np.mean(f1s)),
        f1_weighted=float(sum(f * s for f, s in zip(f1s, supports)) / n),
        precision_macro=float(np.mean(precisions)),
        recall_macro=float(np.mean(recalls)),
        balanced_accuracy=float(np.mean(recalls)),
    )


def screening_report(y_true, yhat, spec: ScreeningSpec) -> ScreeningMetrics:
    """Full screening summary for regression outputs under a fitted spec."""
    truth = screening_labels(y_true, spec)
    pred = prediction_labels(yhat, spec)
    base = classification_report(pred, truth)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        auc = roc_auc(screening_scores(yhat, spec), truth)
    flags = base.flags
    if np.isnan(auc):
        flags = flags + ("auc_undefined_single_class",)
    return replace(base, roc_auc=auc, flags=flags)


# ---------------------------------------------------------------------------
# grid-search cross-validation


@dataclass(frozen=True)
class FoldRecord:
    """One (config, fold) evaluation with its leakage-audit hashes.

    `fit_hash`/`val_hash` are what the harness passed in; `reported_hash` is
    what the fitted estimator itself claims to have seen (its
    ``fit_index_hash_`` attribute, empty when the estimator records none).
    """

    config_index: int
    fold_index: int
    fit_hash: str
    val_hash: str
    rmse: float
    seed: int
    error: str = ""
    reported_hash: str = ""


@dataclass(frozen=True)
class ConfigScore:
    index: int
    fingerprint: str
    fold_rmse: tuple
    mean_rmse: float
    rank: int
    excluded: bool = False
    reason: str = ""


@dataclass(frozen=True)
class GridSearchResult:
    best_index: int
    best_config: dict
    best_estimator: object
    scores: tuple
    records: tuple
    base_seed: int


def _validate_folds(folds, n_rows: int):
    if len(folds) < 2:
        raise SplitError(f"need at least 2 CV folds, got {len(folds)}")
    seen_val = set()
    out = []
    for k, (fit_idx, val_idx) in enumerate(folds):
        fit = np.asarray(fit_idx, dtype=int)
        val = np.asarray(val_idx, dtype=int)
        if len(fit) == 0 or len(val) == 0:
            raise SplitError(f"fold {k} has an empty side")
        if set(fit) & set(val):
            raise SplitError(f"fold {k} leaks: fit and validation indices overlap")
        both = np.concatenate([fit, val])
        if both.min() < 0 or both.max() >= n_rows:
            raise SplitError(f"fold {k} indexes outside the {n_rows} training rows")
        if seen_val & set(val):
            raise SplitError(f"fold {k} revisits validation rows from an earlier fold")
        seen_val |= set(val)
        out.append((fit, val))
    return out


def grid_search_cv(
    builder,
    grid,
    X,
    y,
    folds,
    base_seed: int = 0,
    n_jobs: int = 1,
    family: str = "model",
) -> GridSearchResult:
    """Select a configuration by mean cross-validation RMSE in original units.

    `builder(config, seed)` must return a fresh unfitted estimator whose
    predict output is already in original target units. Each (config, fold)
    task owns an independent estimator and a seed derived from
    (base_seed, config index, fold index), so serial and parallel execution
    produce identical results. A config is excluded only when every fold
    fails; ties on the mean go to the earlier grid entry. The winner is
    refitted on all rows.
    """
    grid = list(grid)
    if not grid:
        raise ConfigError(f"{family}: empty configuration grid")
    X = np.asarray(X, dtype=float)
    y = as_float_vector(y)
    folds = _validate_folds(folds, len(X))
    n_folds = len(folds)

    def evaluate(ci, fi):
        config = grid[ci]
        fit_idx, val_idx = folds[fi]
        seed = derive_seed(base_seed, ci, fi)
        reported = ""
        try:
            estimator = builder(config, seed)
            estimator.fit(X[fit_idx], y[fit_idx])
            reported = getattr(estimator, "fit_index_hash_", "")
            pred = np.asarray(estimator.predict(X[val_idx]), dtype=float)
            rmse = float(np.sqrt(np.mean((pred - y[val_idx]) ** 2)))
            error = ""
        except Exception as exc:
            rmse = float("nan")
            error = f"{type(exc).__name__}: {exc}"
        return FoldRecord(
            ci, fi, index_hash(fit_idx), index_hash(val_idx), rmse, seed, error, reported
        )

    tasks = [(ci, fi) for ci in range(len(grid)) for fi in range(n_folds)]
    if n_jobs == 1:
        records = [evaluate(ci, fi) for ci, fi in tasks]
    else:
        records = Parallel(n_jobs=n_jobs, backend="threading")(
            delayed(evaluate)(ci, fi) for ci, fi in tasks
        )

    means = np.full(len(grid), np.inf)
    scores = []
    for ci, config in enumerate(grid):
        recs = records[ci * n_folds : (ci + 1) * n_folds]
        fold_rmse = tuple(r.rmse for r in recs)
        ok = [r.rmse for r in recs if not np.isnan(r.rmse)]
        excluded = not ok
        if excluded:
            reason = recs[0].error
            mean_rmse = float("nan")
            log.warning("%s config %d excluded: %s", family, ci, reason)
        else:
            reason = ""
            mean_rmse = float(np.mean(ok))
            means[ci] = mean_rmse
        scores.append((ci, fold_rmse, mean_rmse, excluded, reason))

    if not np.isfinite(means).any():
        first = next(r.error for r in records if r.error)
        raise FitError(f"{family}: every configuration failed cross-validation; first reason: {first}")

    order = np.argsort(means, kind="stable")
    ranks = np.empty(len(grid), dtype=int)
    ranks[order] = np.arange(1, len(grid) + 1)
    best_index = int(np.argmin(means))

    score_rows = tuple(
        ConfigScore(
            index=ci,
            fingerprint=stable_fingerprint(grid[ci]),
            fold_rmse=fold_rmse,
            mean_rmse=mean_rmse,
            rank=int(ranks[ci]),
            excluded=excluded,
            reason=reason,
        )
        for ci, fold_rmse, mean_rmse, excluded, reason in scores
    )

    refit_seed = derive_seed(base_seed, best_index, "refit")
    best_estimator = builder(grid[best_index], refit_seed)
    best_estimator.fit(X, y)
    return GridSearchResult(
        best_index=best_index,
        best_config=dict(grid[best_index]),
        best_estimator=best_estimator,
        scores=score_rows,
        records=tuple(records),
        base_seed=base_seed,
    )


def audit_fold_hashes(result: GridSearchResult, folds) -> int:
    """Check every recorded fit hash against its fold's training part.

    Returns the number of records checked; raises on any mismatch.
    """
    expected = [
        (index_hash(np.asarray(f, dtype=int)), index_hash(np.asarray(v, dtype=int)))
        for f, v in folds
    ]
    for rec in result.records:
        want_fit, want_val = expected[rec.fold_index]
        if rec.fit_hash != want_fit or rec.val_hash != want_val:
            raise ProtocolError(
                f"config {rec.config_index} fold {rec.fold_index} saw the wrong rows"
            )
    return len(result.records)


def dump_cv_table(result: GridSearchResult, path) -> None:
    """CSV of per-config CV scores: fingerprint, per-fold RMSE, mean, rank."""
    n_folds = len(result.scores[0].fold_rmse)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["fingerprint"] + [f"fold_{k}" for k in range(n_folds)] + ["mean", "rank"]
        )
        for row in result.scores:
            writer.writerow(
                [row.fingerprint]
                + [format_float(v) for v in row.fold_rmse]
                + [format_float(row.mean_rmse), str(row.rank)]
            )
