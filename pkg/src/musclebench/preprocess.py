"""Train-fitted preprocessing: imputation, power transform, scaling, PCA,
angle encoding, engineered composites, and the full feature pipeline.

Every transformer here follows the usual estimator contract: parameters in
``__init__``, statistics learned in ``fit`` (train rows only), applied in
``transform``.  ``FeaturePipeline`` chains them in the protocol order and
records a hash of the row indices it was fitted on, which the benchmark
harness later checks against the split bookkeeping.
"""
from __future__ import annotations

import io
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .data import Cohort
from .errors import ConfigError, DomainError, FitError, SchemaError
from .util import as_float_matrix, ensure_fitted, format_float, index_hash

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_RATIO_EPS = 1e-9
_SCALE_FLOOR = 1e-12

# composites built from raw (imputed) biomarker values, before any transform
COMPOSITES = (
    ("nlr", ("balf_neutrophils", "balf_lymphocytes"), "ratio"),
    ("crp_per_cell", ("crp", "balf_total"), "ratio"),
    ("ox_stress_over_vo2", ("ox_stress", "vo2"), "ratio"),
    ("crp_vo2", ("crp", "vo2"), "product"),
    ("crp_ox_stress", ("crp", "ox_stress"), "product"),
    ("tnfa_neutrophils", ("tnfa_mrna", "balf_neutrophils"), "product"),
)


# ---------------------------------------------------------------------------
# power transform


def yeo_johnson(x, lam: float) -> np.ndarray:
    """Yeo-Johnson transform, branch-exact at lam = 0 and lam = 2."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    if abs(lam) < np.spacing(1.0):
        out[pos] = np.log1p(x[pos])
    else:
        out[pos] = (np.power(x[pos] + 1.0, lam) - 1.0) / lam
    neg = ~pos
    if abs(lam - 2.0) < np.spacing(1.0):
        out[neg] = -np.log1p(-x[neg])
    else:
        out[neg] = -(np.power(1.0 - x[neg], 2.0 - lam) - 1.0) / (2.0 - lam)
    return out


def yj_log_likelihood(x: np.ndarray, lam: float) -> float:
    """Gaussian profile log-likelihood of the transformed sample, including
    the transform Jacobian; constants independent of lam are dropped."""
    t = yeo_johnson(x, lam)
    var = float(np.var(t))
    if not np.isfinite(var) or var <= 0.0:
        return -math.inf
    n = len(x)
    jac = float(np.sum(np.sign(x) * np.log1p(np.abs(x))))
    return -0.5 * n * math.log(var) + (lam - 1.0) * jac


def estimate_yj_lambda(
    values,
    search_low: float = -5.0,
    search_high: float = 5.0,
    grid_step: float = 0.05,
    tol: float = 1e-6,
) -> float:
    """Maximum-likelihood lambda: coarse grid scan then golden-section refinement.

    A constant column has no information about lambda; it yields lambda = 1
    and a warning so the caller can flag the column.
    """
    x = np.asarray(values, dtype=float)
    x = x[~np.isnan(x)]
    if x.size == 0:
        raise FitError("cannot estimate a power transform from an all-missing column")
    if np.all(x == x[0]):
        warnings.warn("constant column: power transform lambda fixed to 1", UserWarning)
        return 1.0
    grid = np.arange(search_low, search_high + grid_step / 2.0, grid_step)
    scores = np.array([yj_log_likelihood(x, lam) for lam in grid])
    best = int(np.argmax(scores))
    lo = grid[max(best - 1, 0)]
    hi = grid[min(best + 1, len(grid) - 1)]
    # golden-section maximization on the bracketing interval
    a, b = float(lo), float(hi)
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc = yj_log_likelihood(x, c)
    fd = yj_log_likelihood(x, d)
    while b - a > tol:
        if fc < fd:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = yj_log_likelihood(x, d)
        else:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = yj_log_likelihood(x, c)
    return 0.5 * (a + b)


class YeoJohnsonTransformer(BaseEstimator, TransformerMixin):
    """Column-wise Yeo-Johnson with per-column MLE lambda.

    Attributes after fit: ``lambdas_`` (per column) and ``constant_columns_``
    (mask of columns that carried no information and were left at lambda 1).
    """

    def __init__(self, search_low: float = -5.0, search_high: float = 5.0,
                 grid_step: float = 0.05):
        self.search_low = search_low
        self.search_high = search_high
        self.grid_step = grid_step

    def fit(self, X, y=None):
        X = as_float_matrix(X, allow_nan=True)
        lambdas = np.empty(X.shape[1])
        constant = np.zeros(X.shape[1], dtype=bool)
        for j in range(X.shape[1]):
            col = X[:, j]
            finite = col[~np.isnan(col)]
            if finite.size and np.all(finite == finite[0]):
                constant[j] = True
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    lambdas[j] = estimate_yj_lambda(
                        col, self.search_low, self.search_high, self.grid_step
                    )
            else:
                lambdas[j] = estimate_yj_lambda(
                    col, self.search_low, self.search_high, self.grid_step
                )
        self.lambdas_ = lambdas
        self.constant_columns_ = constant
        return self

    def transform(self, X):
        ensure_fitted(self, "lambdas_")
        X = as_float_matrix(X, allow_nan=True)
        if X.shape[1] != len(self.lambdas_):
            raise ValueError(
                f"expected {len(self.lambdas_)} columns, got {X.shape[1]}"
            )
        out = np.empty_like(X)
        for j, lam in enumerate(self.lambdas_):
            out[:, j] = yeo_johnson(X[:, j], lam)
        return out


# ---------------------------------------------------------------------------
# imputation and scaling


class MedianImputer(BaseEstimator, TransformerMixin):
    """Replaces missing cells with the training median of their column."""

    def __init__(self):
        pass

    def fit(self, X, y=None, column_names=None):
        X = as_float_matrix(X, allow_nan=True)
        medians = np.empty(X.shape[1])
        for j in range(X.shape[1]):
            col = X[:, j]
            finite = col[~np.isnan(col)]
            if finite.size == 0:
                name = column_names[j] if column_names else f"#{j}"
                raise FitError(f"column {name!r} is entirely missing; cannot impute")
            medians[j] = np.median(finite)
        self.medians_ = medians
        return self

    def transform(self, X):
        ensure_fitted(self, "medians_")
        X = as_float_matrix(X, allow_nan=True).copy()
        if X.shape[1] != len(self.medians_):
            raise ValueError(f"expected {len(self.medians_)} columns, got {X.shape[1]}")
        for j in range(X.shape[1]):
            mask = np.isnan(X[:, j])
            X[mask, j] = self.medians_[j]
        return X


class ColumnScaler(BaseEstimator, TransformerMixin):
    """Standard (mean/SD) or robust (median/IQR) column scaling.

    The IQR uses linearly interpolated order statistics; either scale is
    floored at 1e-12, so a constant column is centered and left at zero.
    """

    def __init__(self, kind: str = "standard"):
        self.kind = kind

    def fit(self, X, y=None):
        if self.kind not in ("standard", "robust"):
            raise ConfigError(f"unknown scaler kind {self.kind!r}")
        X = as_float_matrix(X)
        if self.kind == "standard":
            center = X.mean(axis=0)
            scale = X.std(axis=0)
        else:
            center = np.median(X, axis=0)
            q25, q75 = np.percentile(X, [25.0, 75.0], axis=0)
            scale = q75 - q25
        self.center_ = center
        self.scale_ = np.maximum(scale, _SCALE_FLOOR)
        return self

    def transform(self, X):
        ensure_fitted(self, "center_")
        X = as_float_matrix(X)
        if X.shape[1] != len(self.center_):
            raise ValueError(f"expected {len(self.center_)} columns, got {X.shape[1]}")
        return (X - self.center_) / self.scale_


# ---------------------------------------------------------------------------
# target transform


def target_forward(y) -> np.ndarray:
    """log(1 + y); metric computation always happens back in original units."""
    y = np.asarray(y, dtype=float)
    if np.any(y <= -1.0):
        raise DomainError("log1p target transform needs y > -1")
    return np.log1p(y)


def target_inverse(z) -> np.ndarray:
    return np.expm1(np.asarray(z, dtype=float))


# ---------------------------------------------------------------------------
# PCA and angle encoding


class PCAReducer(BaseEstimator, TransformerMixin):
    """PCA via the eigendecomposition of the training covariance (ddof=1).

    Component signs follow one convention: the entry with the largest
    magnitude in each component is made positive, so refits are reproducible.
    """

    def __init__(self, n_components: int):
        self.n_components = n_components

    def fit(self, X, y=None):
        X = as_float_matrix(X)
        n, p = X.shape
        q = self.n_components
        if not 1 <= q <= p:
            raise ConfigError(f"n_components must lie in [1, {p}], got {q}")
        if n < 2:
            raise FitError("PCA needs at least 2 training rows")
        mean = X.mean(axis=0)
        cov = np.cov(X - mean, rowvar=False, ddof=1).reshape(p, p)
        evals, evecs = np.linalg.eigh(cov)
        order = np.argsort(evals)[::-1]
        evals = evals[order]
        evecs = evecs[:, order]
        components = evecs[:, :q].T.copy()
        for row in components:
            j = int(np.argmax(np.abs(row)))
            if row[j] < 0:
                row *= -1.0
        self.mean_ = mean
        self.components_ = components
        self.explained_variance_ = np.maximum(evals[:q], 0.0)
        self.total_variance_ = float(np.sum(evals))
        return self

    def transform(self, X):
        ensure_fitted(self, "components_")
        X = as_float_matrix(X)
        return (X - self.mean_) @ self.components_.T


class AngleMap(BaseEstimator, TransformerMixin):
    """Linear min-max map of each column onto a fixed angle interval.

    Out-of-range test values are clamped to the interval ends; a column that
    was constant on the train rows maps everything to the interval midpoint.
    """

    def __init__(self, low: float = -math.pi / 2.0, high: float = math.pi / 2.0):
        self.low = low
        self.high = high

    def fit(self, X, y=None):
        if not self.low < self.high:
            raise ConfigError("angle interval must satisfy low < high")
        if self.high - self.low > 2.0 * math.pi + 1e-12:
            raise ConfigError("angle interval must not exceed 2*pi")
        X = as_float_matrix(X)
        self.min_ = X.min(axis=0)
        self.max_ = X.max(axis=0)
        self.degenerate_ = self.max_ == self.min_
        return self

    def transform(self, X):
        ensure_fitted(self, "min_")
        X = as_float_matrix(X)
        if X.shape[1] != len(self.min_):
            raise ValueError(f"expected {len(self.min_)} columns, got {X.shape[1]}")
        width = np.where(self.degenerate_, 1.0, self.max_ - self.min_)
        unit = (X - self.min_) / width
        theta = self.low + unit * (self.high - self.low)
        theta = np.clip(theta, self.low, self.high)
        midpoint = 0.5 * (self.low + self.high)
        theta[:, self.degenerate_] = midpoint
        return theta


# ---------------------------------------------------------------------------
# engineered features


def engineered_features(X: np.ndarray, names) -> tuple[np.ndarray, tuple[str, ...], tuple[str, ...]]:
    """Appends ratio/product composites built from raw (imputed) columns.

    Composites whose source columns are not present are skipped.  Returns the
    augmented matrix, the full output name tuple, and the names actually added.
    """
    X = as_float_matrix(X)
    names = tuple(names)
    if X.shape[1] != len(names):
        raise ValueError("names must match the matrix columns")
    col = {name: X[:, j] for j, name in enumerate(names)}
    blocks = [X]
    out_names = list(names)
    added = []
    for comp_name, (a, b), kind in COMPOSITES:
        if a not in col or b not in col:
            continue
        if kind == "ratio":
            values = col[a] / (col[b] + _RATIO_EPS)
        else:
            values = col[a] * col[b]
        blocks.append(values[:, None])
        out_names.append(comp_name)
        added.append(comp_name)
    return np.hstack(blocks), tuple(out_names), tuple(added)


def condition_interactions(phi: np.ndarray, c: np.ndarray) -> np.ndarray:
    """[phi, c, c*phi]: every feature gets a condition-gated copy."""
    phi = as_float_matrix(phi, "phi")
    c = np.asarray(c, dtype=float).reshape(-1)
    if phi.shape[0] != c.shape[0]:
        raise ValueError("phi and c must have the same number of rows")
    return np.hstack([phi, c[:, None], c[:, None] * phi])


# ---------------------------------------------------------------------------
# full pipeline


@dataclass(frozen=True)
class PipelineConfig:
    """Feature budget and transform switches for one model family."""

    columns: tuple[str, ...]
    include_condition: bool = False
    engineered: bool = False
    interactions: bool = False
    scaler: str = "standard"
    pca_components: int | None = None
    angle_low: float = -math.pi / 2.0
    angle_high: float = math.pi / 2.0
    use_angles: bool = False
    log_target: bool = True

    def __post_init__(self):
        if self.interactions and not self.include_condition:
            raise ConfigError("interactions require include_condition")
        if self.use_angles and self.pca_components is None:
            # angles without PCA are allowed; nothing to validate here
            pass


class FeaturePipeline(BaseEstimator):
    """The shared preprocessing chain, fitted on training rows only.

    Order: median impute -> composites on raw values -> Yeo-Johnson ->
    scaling -> append condition (raw 0/1) and interactions -> optional PCA ->
    optional angle map.  ``fit_index_hash_`` records which rows the fit saw.
    """

    def __init__(self, config: PipelineConfig):
        self.config = config

    # -- fitting ------------------------------------------------------------

    def fit(self, cohort: Cohort, idx) -> "FeaturePipeline":
        cfg = self.config
        idx = np.asarray(sorted(int(i) for i in idx), dtype=int)
        known = set(cohort.schema.names)
        bad = [c for c in cfg.columns if c not in known]
        if bad:
            raise SchemaError(f"budget names unknown to the schema: {bad}")
        present = tuple(c for c in cfg.columns if c in cohort.feature_names)
        if cfg.columns and not present:
            raise SchemaError(
                f"none of the budget columns {list(cfg.columns)} exist in this cohort"
            )
        self.columns_ = present
        self.dropped_columns_ = tuple(c for c in cfg.columns if c not in present)

        raw = cohort.columns(self.columns_, idx)
        self.imputer_ = MedianImputer().fit(raw, column_names=self.columns_)
        imputed = self.imputer_.transform(raw)

        if cfg.engineered:
            imputed, names, added = engineered_features(imputed, self.columns_)
            self.engineered_names_ = added
        else:
            names = self.columns_
            self.engineered_names_ = ()
        self.block_names_ = tuple(names)

        if imputed.shape[1] > 0:
            self.power_ = YeoJohnsonTransformer().fit(imputed)
            powered = self.power_.transform(imputed)
            self.scaler_ = ColumnScaler(kind=cfg.scaler).fit(powered)
            scaled = self.scaler_.transform(powered)
        else:
            self.power_ = None
            self.scaler_ = None
            scaled = imputed

        assembled, out_names = self._assemble(scaled, cohort, idx)

        if cfg.pca_components is not None:
            self.pca_ = PCAReducer(cfg.pca_components).fit(assembled)
            assembled = self.pca_.transform(assembled)
            out_names = tuple(f"pc_{k}" for k in range(cfg.pca_components))
        else:
            self.pca_ = None

        if cfg.use_angles:
            self.angles_ = AngleMap(cfg.angle_low, cfg.angle_high).fit(assembled)
            assembled = self.angles_.transform(assembled)
            out_names = tuple(f"angle_{k}" for k in range(assembled.shape[1]))
        else:
            self.angles_ = None

        self.feature_names_out_ = out_names
        self.n_features_out_ = assembled.shape[1]
        self.fit_index_hash_ = index_hash(idx)
        self.n_fit_ = len(idx)
        return self

    def _assemble(self, scaled: np.ndarray, cohort: Cohort, idx) -> tuple[np.ndarray, tuple[str, ...]]:
        cfg = self.config
        names = list(self.block_names_)
        if cfg.interactions:
            c = cohort.condition_values(idx).astype(float)
            out = condition_interactions(scaled, c)
            names = names + ["condition"] + [f"cs_x_{n}" for n in self.block_names_]
        elif cfg.include_condition:
            c = cohort.condition_values(idx).astype(float)
            out = np.hstack([scaled, c[:, None]])
            names = names + ["condition"]
        else:
            out = scaled
        return out, tuple(names)

    # -- applying -----------------------------------------------------------

    def transform(self, cohort: Cohort, idx) -> np.ndarray:
        ensure_fitted(self, "fit_index_hash_")
        idx = np.asarray([int(i) for i in idx], dtype=int)
        raw = cohort.columns(self.columns_, idx)
        imputed = self.imputer_.transform(raw)
        if self.config.engineered:
            imputed, _, _ = engineered_features(imputed, self.columns_)
        if self.power_ is not None:
            scaled = self.scaler_.transform(self.power_.transform(imputed))
        else:
            scaled = imputed
        assembled, _ = self._assemble(scaled, cohort, idx)
        if self.pca_ is not None:
            assembled = self.pca_.transform(assembled)
        if self.angles_ is not None:
            assembled = self.angles_.transform(assembled)
        return assembled

    def fit_transform(self, cohort: Cohort, idx) -> np.ndarray:
        return self.fit(cohort, idx).transform(cohort, idx)

    # -- serialization -------------------------------------------------------

    def to_text(self) -> str:
        ensure_fitted(self, "fit_index_hash_")
        cfg = self.config
        buf = io.StringIO()

        def line(key, value):
            buf.write(f"{key} = {value}\n")

        def fline(key, value):
            buf.write(f"{key} = {format_float(value)}\n")

        buf.write("# fitted feature pipeline\n[config]\n")
        line("columns", ", ".join(cfg.columns))
        line("include_condition", cfg.include_condition)
        line("engineered", cfg.engineered)
        line("interactions", cfg.interactions)
        line("scaler", cfg.scaler)
        line("pca_components", cfg.pca_components if cfg.pca_components else "none")
        line("use_angles", cfg.use_angles)
        fline("angle_low", cfg.angle_low)
        fline("angle_high", cfg.angle_high)
        line("log_target", cfg.log_target)
        buf.write("[columns]\n")
        line("selected", ", ".join(self.columns_))
        line("engineered_added", ", ".join(self.engineered_names_))
        buf.write("[imputer]\n")
        for name, med in zip(self.columns_, self.imputer_.medians_ if self.columns_ else []):
            fline(f"median.{name}", med)
        if self.power_ is not None:
            buf.write("[power]\n")
            for name, lam, const in zip(
                self.block_names_, self.power_.lambdas_, self.power_.constant_columns_
            ):
                fline(f"lambda.{name}", lam)
                if const:
                    line(f"constant.{name}", True)
            buf.write("[scaler]\n")
            for name, center, scale in zip(
                self.block_names_, self.scaler_.center_, self.scaler_.scale_
            ):
                fline(f"center.{name}", center)
                fline(f"scale.{name}", scale)
        if self.pca_ is not None:
            buf.write("[pca]\n")
            line("mean", ", ".join(format_float(v) for v in self.pca_.mean_))
            for k, row in enumerate(self.pca_.components_):
                line(f"component.{k}", ", ".join(format_float(v) for v in row))
            line(
                "explained_variance",
                ", ".join(format_float(v) for v in self.pca_.explained_variance_),
            )
            fline("total_variance", self.pca_.total_variance_)
        if self.angles_ is not None:
            buf.write("[angles]\n")
            line("min", ", ".join(format_float(v) for v in self.angles_.min_))
            line("max", ", ".join(format_float(v) for v in self.angles_.max_))
        buf.write("[fit]\n")
        line("n", self.n_fit_)
        line("index_hash", self.fit_index_hash_)
        return buf.getvalue()

    @staticmethod
    def from_text(text: str) -> "FeaturePipeline":
        sections: dict[str, dict[str, str]] = {}
        current = None
        for raw in text.splitlines():
            s = raw.strip()
            if not s or s.startswith("#"):
                continue
            if s.startswith("[") and s.endswith("]"):
                current = s[1:-1]
                sections[current] = {}
                continue
            key, _, value = s.partition("=")
            sections[current][key.strip()] = value.strip()

        def split_list(value):
            return tuple(v.strip() for v in value.split(",") if v.strip())

        cfg_s = sections["config"]
        pca_c = cfg_s["pca_components"]
        cfg = PipelineConfig(
            columns=split_list(cfg_s["columns"]),
            include_condition=cfg_s["include_condition"] == "True",
            engineered=cfg_s["engineered"] == "True",
            interactions=cfg_s["interactions"] == "True",
            scaler=cfg_s["scaler"],
            pca_components=None if pca_c == "none" else int(pca_c),
            angle_low=float(cfg_s["angle_low"]),
            angle_high=float(cfg_s["angle_high"]),
            use_angles=cfg_s["use_angles"] == "True",
            log_target=cfg_s["log_target"] == "True",
        )
        pipe = FeaturePipeline(cfg)
        pipe.columns_ = split_list(sections["columns"]["selected"])
        pipe.engineered_names_ = split_list(sections["columns"]["engineered_added"])
        pipe.dropped_columns_ = tuple(c for c in cfg.columns if c not in pipe.columns_)
        pipe.block_names_ = pipe.columns_ + pipe.engineered_names_
        imputer = MedianImputer()
        imputer.medians_ = np.array(
            [float(sections["imputer"][f"median.{n}"]) for n in pipe.columns_]
        )
        pipe.imputer_ = imputer
        if "power" in sections:
            power = YeoJohnsonTransformer()
            power.lambdas_ = np.array(
                [float(sections["power"][f"lambda.{n}"]) for n in pipe.block_names_]
            )
            power.constant_columns_ = np.array(
                [sections["power"].get(f"constant.{n}") == "True" for n in pipe.block_names_]
            )
            pipe.power_ = power
            scaler = ColumnScaler(kind=cfg.scaler)
            scaler.center_ = np.array(
                [float(sections["scaler"][f"center.{n}"]) for n in pipe.block_names_]
            )
            scaler.scale_ = np.array(
                [float(sections["scaler"][f"scale.{n}"]) for n in pipe.block_names_]
            )
            pipe.scaler_ = scaler
        else:
            pipe.power_ = None
            pipe.scaler_ = None
        if "pca" in sections:
            pca = PCAReducer(cfg.pca_components)
            pca.mean_ = np.array([float(v) for v in split_list(sections["pca"]["mean"])])
            rows = []
            k = 0
            while f"component.{k}" in sections["pca"]:
                rows.append([float(v) for v in split_list(sections["pca"][f"component.{k}"])])
                k += 1
            pca.components_ = np.array(rows)
            pca.explained_variance_ = np.array(
                [float(v) for v in split_list(sections["pca"]["explained_variance"])]
            )
            pca.total_variance_ = float(sections["pca"]["total_variance"])
            pipe.pca_ = pca
        else:
            pipe.pca_ = None
        if "angles" in sections:
            angles = AngleMap(cfg.angle_low, cfg.angle_high)
            angles.min_ = np.array([float(v) for v in split_list(sections["angles"]["min"])])
            angles.max_ = np.array([float(v) for v in split_list(sections["angles"]["max"])])
            angles.degenerate_ = angles.max_ == angles.min_
            pipe.angles_ = angles
        else:
            pipe.angles_ = None
        fit_s = sections["fit"]
        pipe.n_fit_ = int(fit_s["n"])
        pipe.fit_index_hash_ = fit_s["index_hash"]
        names = list(pipe.block_names_)
        if cfg.interactions:
            names = names + ["condition"] + [f"cs_x_{n}" for n in pipe.block_names_]
        elif cfg.include_condition:
            names = names + ["condition"]
        if cfg.pca_components is not None:
            names = [f"pc_{k}" for k in range(cfg.pca_components)]
        if cfg.use_angles:
            names = [f"angle_{k}" for k in range(len(names))]
        pipe.feature_names_out_ = tuple(names)
        pipe.n_features_out_ = len(names)
        return pipe
