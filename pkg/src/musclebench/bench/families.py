"""Model family registry: report labels, feature budgets, grids, builders.

Each family couples a feature budget (which columns the pipeline may read)
with an estimator constructor and a hyperparameter grid. The registry order
is the report order and mirrors the usual table layout: baselines, classical
raw, classical engineered, SPD distance features, quantum kernels.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from ..data import BIOMARKER_COLUMNS, Cohort
from ..errors import ConfigError
from ..linmodels import (
    ConditionMeansBaseline,
    GlobalMeanBaseline,
    LDAAxisRidge,
    RidgeRegressor,
)
from ..preprocess import (
    FeaturePipeline,
    PipelineConfig,
    target_forward,
    target_inverse,
)
from ..qkernel import (
    QuantumKernelFeatures,
    QuantumKernelRidge,
    VariationalQuantumRegressor,
)
from ..spd import SPDDistanceRidge
from ..trees import ForestRegressor, RegressionTree
from ..util import as_float_vector, ensure_fitted

ALPHAS = (1e-3, 1e-2, 1e-1, 1.0, 10.0)

SECTION_LABELS = {
    "baselines": "Baselines",
    "classical_raw": "Classical models (raw features)",
    "classical_eng": "Classical models (engineered features)",
    "spd": "SPD distance features (3 biomarkers + condition)",
    "quantum": "Quantum kernels (3 biomarkers + condition)",
}


def budget_pipeline_config(budget: str, compact_columns, use_angles: bool = False) -> PipelineConfig:
    """Translate a budget name into the shared pipeline configuration."""
    if budget == "full":
        return PipelineConfig(
            columns=BIOMARKER_COLUMNS, include_condition=True, use_angles=use_angles
        )
    if budget == "engineered":
        return PipelineConfig(
            columns=BIOMARKER_COLUMNS,
            include_condition=True,
            engineered=True,
            interactions=True,
            use_angles=use_angles,
        )
    if budget == "compact-3+condition":
        return PipelineConfig(
            columns=tuple(compact_columns), include_condition=True, use_angles=use_angles
        )
    if budget == "compact-3":
        return PipelineConfig(
            columns=tuple(compact_columns), include_condition=False, use_angles=use_angles
        )
    raise ConfigError(f"unknown feature budget {budget!r}")


class CohortModel(BaseEstimator, RegressorMixin):
    """One benchmark model: feature pipeline + estimator + target transform.

    fit/predict take a column of cohort row ids, not feature values, so the
    whole pipeline is refitted on exactly the rows each CV fold supplies.
    ``fit_index_hash_`` exposes the pipeline's record of the rows it saw,
    which the harness audits against the fold definition. Predictions are
    returned in original target units.
    """

    def __init__(self, cohort, pipeline_config, make_inner, params, seed,
                 split_condition=False):
        self.cohort = cohort
        self.pipeline_config = pipeline_config
        self.make_inner = make_inner
        self.params = params
        self.seed = seed
        self.split_condition = split_condition

    @staticmethod
    def _ids(rows) -> np.ndarray:
        arr = np.asarray(rows)
        if arr.ndim == 2 and arr.shape[1] == 1:
            arr = arr[:, 0]
        if arr.ndim != 1:
            raise ValueError(f"expected a column of cohort row ids, got shape {arr.shape}")
        return arr.astype(int)

    def _split(self, phi: np.ndarray):
        names = self.pipeline_.feature_names_out_
        if "condition" not in names:
            raise ConfigError(
                "this family needs the condition column; enable include_condition"
            )
        col = names.index("condition")
        cond = phi[:, col].astype(int)
        return np.delete(phi, col, axis=1), cond

    def fit(self, rows, y):
        idx = self._ids(rows)
        y = as_float_vector(y)
        self.pipeline_ = FeaturePipeline(self.pipeline_config).fit(self.cohort, idx)
        phi = self.pipeline_.transform(self.cohort, idx)
        z = target_forward(y) if self.pipeline_config.log_target else y
        self.inner_ = self.make_inner(dict(self.params), self.seed, len(idx))
        if self.split_condition:
            features, cond = self._split(phi)
            self.inner_.fit(features, z, conditions=cond)
        else:
            self.inner_.fit(phi, z)
        self.fit_index_hash_ = self.pipeline_.fit_index_hash_
        return self

    def predict(self, rows):
        ensure_fitted(self, "inner_")
        idx = self._ids(rows)
        phi = self.pipeline_.transform(self.cohort, idx)
        if self.split_condition:
            features, cond = self._split(phi)
            z = self.inner_.predict(features, conditions=cond) \
                if isinstance(self.inner_, ConditionMeansBaseline) \
                else self.inner_.predict(features)
        else:
            z = self.inner_.predict(phi)
        z = np.asarray(z, dtype=float)
        return target_inverse(z) if self.pipeline_config.log_target else z


# -- inner estimator constructors; (params, seed, n_fit) -> estimator --------


def _global_mean(params, seed, n_fit):
    return GlobalMeanBaseline()


def _condition_means(params, seed, n_fit):
    return ConditionMeansBaseline()


def _lda_ridge(params, seed, n_fit):
    return LDAAxisRidge(alpha=params["alpha"], shrinkage=params.get("shrinkage", 0.05))


def _ridge(params, seed, n_fit):
    return RidgeRegressor(alpha=params["alpha"])


def _forest(params, seed, n_fit):
    return ForestRegressor(
        n_trees=params["n_trees"],
        max_depth=params["max_depth"],
        min_leaf=params["min_leaf"],
        seed=seed,
    )


def _tree(params, seed, n_fit):
    return RegressionTree(max_depth=params["max_depth"], min_leaf=params["min_leaf"])


def _spd_ridge(params, seed, n_fit):
    n_syn = params.get("n_syn", 0)
    if n_syn == "2x":
        n_syn = 2 * n_fit
    return SPDDistanceRidge(
        n_medoids=params["n_medoids"],
        descriptor=params.get("descriptor", "outer"),
        normalize=params.get("normalize", False),
        knn=params.get("knn", 8),
        shrink=params.get("shrink", 0.1),
        n_syn=n_syn,
        seed=seed,
        alpha=params["alpha"],
    )


def _qkr(params, seed, n_fit):
    return QuantumKernelRidge(
        layers=params["layers"],
        scale=params["scale"],
        power=params.get("power", 1.0),
        lam=params["lam"],
    )


def _qkf(params, seed, n_fit):
    return QuantumKernelFeatures(
        n_centers=params["n_centers"],
        layers=params["layers"],
        scale=params["scale"],
        power=params.get("power", 1.0),
        lam=params["lam"],
        seed=seed,
    )


def _vqr(params, seed, n_fit):
    return VariationalQuantumRegressor(
        var_layers=params["var_layers"],
        layers=params.get("layers", 1),
        scale=params.get("scale", 1.0),
        lr=params.get("lr", 0.1),
        epochs=params.get("epochs", 60),
        seed=seed,
    )


@dataclass(frozen=True)
class FamilySpec:
    """Registry entry tying a report row to its budget, grid, and estimator."""

    name: str
    label: str
    section: str
    budget: str
    make_inner: object
    grid_axes: tuple
    split_condition: bool = False
    use_angles: bool = False


def _axes(**kwargs) -> tuple:
    return tuple(kwargs.items())


_SPD_GRID = _axes(
    n_medoids=(2, 3, 4, 6),
    normalize=(False, True),
    n_syn=(0, "2x"),
    alpha=(1e-2, 1e-1, 1.0, 10.0),
)

FAMILIES = {
    spec.name: spec
    for spec in (
        FamilySpec("global_mean", "Global mean baseline", "baselines", "full",
                   _global_mean, _axes()),
        FamilySpec("condition_means", "Condition means baseline", "baselines", "full",
                   _condition_means, _axes(), split_condition=True),
        FamilySpec("lda_ridge_raw", "LDA condition axis then Ridge", "classical_raw",
                   "full", _lda_ridge, _axes(alpha=ALPHAS), split_condition=True),
        FamilySpec("ridge_raw", "Ridge", "classical_raw", "full",
                   _ridge, _axes(alpha=ALPHAS)),
        FamilySpec("forest_raw", "Random forest", "classical_raw", "full",
                   _forest, _axes(n_trees=(100,), max_depth=(None, 6), min_leaf=(2, 5))),
        FamilySpec("tree_raw", "Shallow decision tree", "classical_raw", "full",
                   _tree, _axes(max_depth=(2, 3, 4), min_leaf=(3, 5))),
        FamilySpec("lda_ridge_eng", "LDA condition axis then Ridge", "classical_eng",
                   "engineered", _lda_ridge, _axes(alpha=ALPHAS), split_condition=True),
        FamilySpec("ridge_eng", "Ridge", "classical_eng", "engineered",
                   _ridge, _axes(alpha=ALPHAS)),
        FamilySpec("forest_eng", "Random forest", "classical_eng", "engineered",
                   _forest, _axes(n_trees=(100,), max_depth=(None, 6), min_leaf=(2, 5))),
        FamilySpec("tree_eng", "Shallow decision tree", "classical_eng", "engineered",
                   _tree, _axes(max_depth=(2, 3, 4), min_leaf=(3, 5))),
        FamilySpec("spd_ridge_base", "Ridge baseline (biomarkers only)", "spd",
                   "compact-3+condition", _spd_ridge,
                   _axes(n_medoids=(0,), alpha=ALPHAS)),
        FamilySpec("spd_ridge", "Ridge + SPD distances (outer-product)", "spd",
                   "compact-3+condition", _spd_ridge, _SPD_GRID),
        FamilySpec("angle_ridge", "Ridge (angle-space)", "quantum",
                   "compact-3+condition", _ridge, _axes(alpha=ALPHAS), use_angles=True),
        FamilySpec("quantum_kernel_ridge", "Quantum kernel ridge (full)", "quantum",
                   "compact-3+condition", _qkr,
                   _axes(layers=(1, 2, 3), scale=(0.5, 1.0, 2.0), power=(0.5, 1.0),
                         lam=(1e-3, 1e-2, 1e-1, 1.0)),
                   use_angles=True),
        FamilySpec("quantum_kernel_features", "Quantum kernel features (clustered)",
                   "quantum", "compact-3+condition", _qkf,
                   _axes(n_centers=(3, 5, 8), layers=(1, 2), scale=(1.0, 2.0),
                         lam=(1e-3, 1e-2, 1e-1)),
                   use_angles=True),
        FamilySpec("variational_quantum", "Variational quantum regressor", "quantum",
                   "compact-3+condition", _vqr,
                   _axes(var_layers=(1, 2), epochs=(60,)), use_angles=True),
    )
}

FAMILY_ORDER = tuple(FAMILIES)


def build_grid(spec: FamilySpec, overrides: dict | None = None) -> list:
    """Cartesian product over the family's axes, override values per key."""
    axes = dict(spec.grid_axes)
    for key, values in (overrides or {}).items():
        if key not in axes:
            raise ConfigError(
                f"{spec.name} has no grid dimension {key!r}; valid: {sorted(axes)}"
            )
        axes[key] = tuple(values)
    if not axes:
        return [{}]
    keys = list(axes)
    return [dict(zip(keys, combo)) for combo in itertools.product(*axes.values())]


def family_builder(spec: FamilySpec, cohort: Cohort, pipe_cfg: PipelineConfig):
    """Builder suitable for grid_search_cv: (params, seed) -> CohortModel."""

    def build(params, seed):
        return CohortModel(
            cohort, pipe_cfg, spec.make_inner, params, seed,
            split_condition=spec.split_condition,
        )

    return build
