"""Greedy variance-reduction regression trees and seeded bagged forests.

Split candidates are midpoints between adjacent distinct sorted values of a
feature.  The chosen split maximizes the SSE reduction; exact ties are broken
by (lowest feature index, lowest threshold), and any split whose reduction is
<= 1e-12 is refused, so fits are fully deterministic.
"""
from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .errors import ConfigError, FitError, PredictionError
from .util import as_float_matrix, as_float_vector, check_same_rows, ensure_fitted

_MIN_REDUCTION = 1e-12
_LEAF = -1


def _best_split(X: np.ndarray, y: np.ndarray, feats: np.ndarray, min_leaf: int):
    """Best (feature, threshold, reduction) over the candidate features.

    Scores every admissible boundary of every candidate column in one pass:
    maximizing sum_l^2/n_l + sum_r^2/n_r is equivalent to maximizing the SSE
    reduction since the parent term is constant within the node.
    """
    n = len(y)
    if n < 2 * min_leaf:
        return None
    Xs = X[:, feats]
    order = np.argsort(Xs, axis=0, kind="stable")
    xs = np.take_along_axis(Xs, order, axis=0)
    ys = y[order]
    cum = np.cumsum(ys, axis=0)
    total = float(cum[-1, 0])
    boundaries = np.arange(min_leaf - 1, n - min_leaf)
    if len(boundaries) == 0:
        return None
    left_sum = cum[boundaries]
    nl = (boundaries + 1).astype(float)[:, None]
    nr = n - nl
    score = left_sum**2 / nl + (total - left_sum) ** 2 / nr
    valid = xs[boundaries + 1] > xs[boundaries]
    score = np.where(valid, score, -np.inf)
    col_pos = np.argmax(score, axis=0)
    col_scores = score[col_pos, np.arange(score.shape[1])]
    j = int(np.argmax(col_scores))
    best = float(col_scores[j])
    if not np.isfinite(best):
        return None
    reduction = best - total * total / n
    if reduction <= _MIN_REDUCTION:
        return None
    pos = int(boundaries[col_pos[j]])
    threshold = 0.5 * (xs[pos, j] + xs[pos + 1, j])
    return int(feats[j]), float(threshold), float(reduction)


class RegressionTree(BaseEstimator, RegressorMixin):
    """CART-style regression tree.

    ``mtry`` (with ``random_state``) samples a feature subset per split; the
    forest uses this, a standalone tree considers every feature.

    Fitted attributes: parallel node arrays ``feature_`` (-1 for leaves),
    ``threshold_``, ``left_``, ``right_``, ``value_``, ``count_``.
    """

    def __init__(self, max_depth: int | None = None, min_leaf: int = 3,
                 mtry: int | None = None, random_state=None):
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.mtry = mtry
        self.random_state = random_state

    def fit(self, X, y):
        X = as_float_matrix(X)
        y = as_float_vector(y)
        check_same_rows(X, y)
        if X.shape[0] == 0:
            raise FitError("cannot grow a tree on zero rows")
        if self.min_leaf < 1:
            raise ConfigError(f"min_leaf must be >= 1, got {self.min_leaf}")
        if self.max_depth is not None and self.max_depth < 0:
            raise ConfigError(f"max_depth must be >= 0, got {self.max_depth}")
        p = X.shape[1]
        mtry = self.mtry if self.mtry is not None else p
        if p > 0 and not 1 <= mtry <= p:
            raise ConfigError(f"mtry must lie in [1, {p}], got {mtry}")
        rng = np.random.default_rng(self.random_state)

        feature, threshold, left, right, value, count = [], [], [], [], [], []

        def new_node():
            feature.append(_LEAF)
            threshold.append(0.0)
            left.append(_LEAF)
            right.append(_LEAF)
            value.append(0.0)
            count.append(0)
            return len(feature) - 1

        def grow(rows: np.ndarray, depth: int) -> int:
            node = new_node()
            ys = y[rows]
            value[node] = float(ys.mean())
            count[node] = len(rows)
            if self.max_depth is not None and depth >= self.max_depth:
                return node
            if len(rows) < 2 * self.min_leaf or np.all(ys == ys[0]) or p == 0:
                return node
            if mtry < p:
                feats = np.sort(rng.choice(p, size=mtry, replace=False))
            else:
                feats = np.arange(p)
            found = _best_split(X[rows], ys, feats, self.min_leaf)
            if found is None:
                return node
            f, t, _ = found
            feature[node] = f
            threshold[node] = t
            mask = X[rows, f] <= t
            left[node] = grow(rows[mask], depth + 1)
            right[node] = grow(rows[~mask], depth + 1)
            return node

        grow(np.arange(X.shape[0]), 0)
        self.feature_ = np.array(feature, dtype=int)
        self.threshold_ = np.array(threshold)
        self.left_ = np.array(left, dtype=int)
        self.right_ = np.array(right, dtype=int)
        self.value_ = np.array(value)
        self.count_ = np.array(count, dtype=int)
        self.n_features_in_ = p
        return self

    def predict(self, X):
        ensure_fitted(self, "feature_")
        X = as_float_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise PredictionError(
                f"tree was fitted with {self.n_features_in_} features, got {X.shape[1]}"
            )
        cur = np.zeros(X.shape[0], dtype=int)
        while True:
            f = self.feature_[cur]
            active = f != _LEAF
            if not active.any():
                break
            rows = np.flatnonzero(active)
            goes_left = X[rows, f[rows]] <= self.threshold_[cur[rows]]
            nxt = np.where(goes_left, self.left_[cur[rows]], self.right_[cur[rows]])
            cur[rows] = nxt
        return self.value_[cur]

    def dump(self, feature_names=None) -> str:
        """Human-readable indented rendering of the fitted tree."""
        ensure_fitted(self, "feature_")

        def name(f: int) -> str:
            if feature_names is not None:
                return str(feature_names[f])
            return f"x{f}"

        lines: list[str] = []

        def render(node: int, depth: int):
            pad = "  " * depth
            f = self.feature_[node]
            if f == _LEAF:
                lines.append(
                    f"{pad}leaf mean={self.value_[node]:.6g} n={self.count_[node]}"
                )
                return
            lines.append(f"{pad}{name(f)} <= {self.threshold_[node]:.6g}")
            render(self.left_[node], depth + 1)
            render(self.right_[node], depth + 1)

        render(0, 0)
        return "\n".join(lines) + "\n"


class ForestRegressor(BaseEstimator, RegressorMixin):
    """Bagged regression trees with per-tree derived seeds.

    Tree t draws its bootstrap sample and per-split feature subsets from
    ``default_rng([seed, t])``, so a fit is bit-for-bit reproducible no matter
    how the trees are scheduled.
    """

    def __init__(self, n_trees: int = 300, max_depth: int | None = None,
                 min_leaf: int = 2, mtry: int | None = None,
                 bootstrap: bool = True, seed: int = 0):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.mtry = mtry
        self.bootstrap = bootstrap
        self.seed = seed

    def fit(self, X, y):
        X = as_float_matrix(X)
        y = as_float_vector(y)
        check_same_rows(X, y)
        if self.n_trees < 1:
            raise ConfigError(f"n_trees must be >= 1, got {self.n_trees}")
        n, p = X.shape
        mtry = self.mtry if self.mtry is not None else max(1, math.ceil(p / 3))
        self.trees_ = []
        for t in range(self.n_trees):
            rng = np.random.default_rng([self.seed, t])
            rows = rng.integers(0, n, size=n) if self.bootstrap else np.arange(n)
            tree = RegressionTree(
                max_depth=self.max_depth,
                min_leaf=self.min_leaf,
                mtry=min(mtry, p) if p else None,
                random_state=rng,
            )
            tree.fit(X[rows], y[rows])
            self.trees_.append(tree)
        self.n_features_in_ = p
        self.mtry_ = mtry
        return self

    def predict(self, X):
        ensure_fitted(self, "trees_")
        X = as_float_matrix(X)
        out = np.zeros(X.shape[0])
        for tree in self.trees_:
            out += tree.predict(X)
        return out / len(self.trees_)
