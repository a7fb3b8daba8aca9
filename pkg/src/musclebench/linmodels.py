"""Linear regressors: ridge, mean baselines, and the LDA condition-axis model.

The ridge solve centers features and target first so the intercept is never
penalized, then solves the normal equations (X_c^T X_c + alpha I) w = X_c^T y.
With alpha = 0 on rank-deficient inputs a fixed 1e-10 jitter is added and the
model flagged, instead of failing.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .errors import ConfigError, FitError, NumericError, PredictionError
from .util import as_float_matrix, as_float_vector, check_same_rows, ensure_fitted

_JITTER = 1e-10


class RidgeRegressor(BaseEstimator, RegressorMixin):
    """Ridge regression with an unpenalized intercept (optional).

    Attributes after fit: ``coef_``, ``intercept_``, ``jitter_applied_``.
    With ``fit_intercept=False`` the raw normal equations are solved and the
    intercept is fixed at zero (used by kernel-feature heads that must match
    an uncentered kernel solve exactly).
    """

    def __init__(self, alpha: float = 1.0, fit_intercept: bool = True):
        self.alpha = alpha
        self.fit_intercept = fit_intercept

    def fit(self, X, y):
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        X = as_float_matrix(X)
        y = as_float_vector(y)
        check_same_rows(X, y)
        if X.shape[0] == 0:
            raise FitError("cannot fit ridge on zero rows")
        n, p = X.shape
        if self.fit_intercept:
            x_mean = X.mean(axis=0)
            y_mean = float(y.mean())
            Xc = X - x_mean
            yc = y - y_mean
        else:
            x_mean = np.zeros(p)
            y_mean = 0.0
            Xc, yc = X, y
        gram = Xc.T @ Xc
        self.jitter_applied_ = False
        if p == 0:
            self.coef_ = np.zeros(0)
        else:
            reg = float(self.alpha)
            if reg == 0.0:
                evals = np.linalg.eigvalsh(gram)
                top = max(float(evals[-1]), 0.0)
                if evals[0] <= max(n, p) * np.finfo(float).eps * max(top, 1.0):
                    reg = _JITTER
                    self.jitter_applied_ = True
            try:
                self.coef_ = np.linalg.solve(gram + reg * np.eye(p), Xc.T @ yc)
            except np.linalg.LinAlgError as exc:
                raise NumericError(f"ridge normal equations are singular: {exc}") from exc
        self.intercept_ = y_mean - float(x_mean @ self.coef_)
        self.n_features_in_ = p
        return self

    def predict(self, X):
        ensure_fitted(self, "coef_")
        X = as_float_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise PredictionError(
                f"model was fitted with {self.n_features_in_} features, got {X.shape[1]}"
            )
        return X @ self.coef_ + self.intercept_


class GlobalMeanBaseline(BaseEstimator, RegressorMixin):
    """Predicts the training mean of the target for every subject."""

    def __init__(self):
        pass

    def fit(self, X, y):
        y = as_float_vector(y)
        if y.size == 0:
            raise FitError("cannot fit a mean on zero rows")
        self.mean_ = float(y.mean())
        return self

    def predict(self, X):
        ensure_fitted(self, "mean_")
        n = np.asarray(X).shape[0]
        return np.full(n, self.mean_)


class ConditionMeansBaseline(BaseEstimator, RegressorMixin):
    """Predicts the training mean of the subject's condition group."""

    uses_conditions = True

    def __init__(self):
        pass

    def fit(self, X, y, conditions=None):
        y = as_float_vector(y)
        if conditions is None:
            raise FitError("condition-means baseline needs condition labels")
        c = np.asarray(conditions, dtype=int)
        check_same_rows(c[:, None], y)
        self.means_ = {}
        for level in np.unique(c):
            self.means_[int(level)] = float(y[c == level].mean())
        return self

    def predict(self, X, conditions=None):
        ensure_fitted(self, "means_")
        if conditions is None:
            raise PredictionError("condition-means baseline needs condition labels")
        c = np.asarray(conditions, dtype=int)
        unseen = sorted(set(int(v) for v in np.unique(c)) - set(self.means_))
        if unseen:
            raise PredictionError(f"unseen condition level(s) at predict time: {unseen}")
        return np.array([self.means_[int(v)] for v in c])


def fit_lda_axis(X: np.ndarray, conditions, shrinkage: float = 0.05):
    """Unit direction of the shrunken-LDA discriminant between the two groups.

    Returns (direction, shrinkage_used, flags) where flags may contain
    "raised_shrinkage" (singular pooled covariance forced shrinkage to 0.1)
    and "zero_direction" (identical group means; direction is all zeros).
    The direction's sign points from the Sham mean toward the CS mean.
    """
    X = as_float_matrix(X)
    c = np.asarray(conditions, dtype=int)
    check_same_rows(X, c.astype(float))
    if not 0.0 <= shrinkage <= 1.0:
        raise ConfigError(f"shrinkage must lie in [0, 1], got {shrinkage}")
    levels = np.unique(c)
    if len(levels) != 2:
        raise FitError(f"LDA axis needs exactly two condition levels, got {levels.tolist()}")
    n, p = X.shape
    parts = [X[c == level] for level in levels]
    if any(len(part) < 2 for part in parts):
        raise FitError("each condition group needs at least 2 subjects for LDA")
    mu = [part.mean(axis=0) for part in parts]
    pooled = np.zeros((p, p))
    dof = 0
    for part in parts:
        centered = part - part.mean(axis=0)
        pooled += centered.T @ centered
        dof += len(part) - 1
    pooled /= dof
    flags = []
    used = shrinkage

    def shrunk(s):
        target = (np.trace(pooled) / p) * np.eye(p)
        return (1.0 - s) * pooled + s * target

    sigma = shrunk(used)
    evals = np.linalg.eigvalsh(sigma)
    if evals[0] <= max(n, p) * np.finfo(float).eps * max(float(evals[-1]), 1.0):
        used = max(used, 0.1)
        flags.append("raised_shrinkage")
        sigma = shrunk(used)
    delta = mu[1] - mu[0]
    if np.linalg.norm(delta) == 0.0:
        flags.append("zero_direction")
        return np.zeros(p), used, tuple(flags)
    try:
        direction = np.linalg.solve(sigma, delta)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"pooled covariance is singular even after shrinkage: {exc}") from exc
    norm = np.linalg.norm(direction)
    if norm == 0.0 or not np.isfinite(norm):
        flags.append("zero_direction")
        return np.zeros(p), used, tuple(flags)
    direction = direction / norm
    if float(direction @ delta) < 0:
        direction = -direction
    return direction, used, tuple(flags)


class LDAAxisRidge(BaseEstimator, RegressorMixin):
    """Ridge on the 1-D LDA discriminant score separating the two conditions.

    If the group means coincide the direction is zero; the model then falls
    back to an intercept-only fit (flagged via ``zero_direction_``).
    """

    uses_conditions = True

    def __init__(self, alpha: float = 1.0, shrinkage: float = 0.05):
        self.alpha = alpha
        self.shrinkage = shrinkage

    def fit(self, X, y, conditions=None):
        X = as_float_matrix(X)
        y = as_float_vector(y)
        check_same_rows(X, y)
        if conditions is None:
            raise FitError("LDA axis model needs condition labels at fit time")
        direction, used, flags = fit_lda_axis(X, conditions, self.shrinkage)
        self.direction_ = direction
        self.shrinkage_used_ = used
        self.flags_ = flags
        self.zero_direction_ = "zero_direction" in flags
        if self.zero_direction_:
            self.head_ = GlobalMeanBaseline().fit(X, y)
        else:
            score = (X @ direction)[:, None]
            self.head_ = RidgeRegressor(alpha=self.alpha).fit(score, y)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        ensure_fitted(self, "direction_")
        X = as_float_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise PredictionError(
                f"model was fitted with {self.n_features_in_} features, got {X.shape[1]}"
            )
        if self.zero_direction_:
            return self.head_.predict(X)
        score = (X @ self.direction_)[:, None]
        return self.head_.predict(score)
