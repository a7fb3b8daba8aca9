"""SPD descriptors, Stein-divergence geometry, medoid prototypes, and the
distance-feature ridge model.

Each subject's preprocessed feature vector is lifted to a symmetric positive
definite matrix (outer-product or local-covariance descriptor).  Distances to
a small set of medoid prototypes under the Stein divergence

    D(A, B) = logdet((A + B) / 2) - (logdet A + logdet B) / 2

are appended to the feature vector and fed to ridge.  The prototype pool is
built from training descriptors plus optional synthetic interpolants only;
test descriptors never enter the pool by construction.
"""
from __future__ import annotations

import hashlib
import itertools
import math
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .errors import ConfigError, DomainError, NumericError
from .linmodels import RidgeRegressor
from .util import as_float_matrix, as_float_vector, check_same_rows, ensure_fitted, seeded_rng

SPD_EPS = 1e-6
NORM_DELTA = 1e-12
EIG_FLOOR = 1e-14
_SYM_TOL = 1e-10


@dataclass(frozen=True)
class SPDDescriptor:
    """A subject's SPD matrix plus the jitter used and how it was produced."""

    matrix: np.ndarray
    eps: float
    source: str  # outer | local_cov | synthetic

    def __post_init__(self):
        if self.source not in ("outer", "local_cov", "synthetic"):
            raise ConfigError(f"unknown descriptor source {self.source!r}")

    def validate(self) -> None:
        """Symmetry within 1e-10 and minimum eigenvalue >= eps/2."""
        S = self.matrix
        tol = _SYM_TOL * max(1.0, float(np.abs(S).max()))
        if float(np.abs(S - S.T).max()) > tol:
            raise NumericError(f"{self.source} descriptor is not symmetric")
        lo = float(np.linalg.eigvalsh(S)[0])
        if lo < 0.5 * self.eps:
            raise NumericError(
                f"{self.source} descriptor min eigenvalue {lo:.3e} below {0.5 * self.eps:.3e}"
            )


@dataclass(frozen=True)
class MedoidSet:
    """Prototype descriptors with pool provenance."""

    prototypes: tuple
    indices: tuple
    train_count: int
    synthetic_count: int
    seed: int
    objective: float


def _check_square_symmetric(S: np.ndarray, label: str) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"{label} must be a square matrix, got shape {S.shape}")
    tol = _SYM_TOL * max(1.0, float(np.abs(S).max()))
    if float(np.abs(S - S.T).max()) > tol:
        raise NumericError(f"{label} is not symmetric")
    return S


def _logdet_spd(S: np.ndarray, label: str) -> float:
    evals = np.linalg.eigvalsh(S)
    if float(evals[0]) <= EIG_FLOOR:
        raise NumericError(
            f"{label} is not positive definite (min eigenvalue {evals[0]:.3e})"
        )
    return float(np.sum(np.log(evals)))


def outer_descriptor(x, normalize: bool = False, eps: float = SPD_EPS) -> SPDDescriptor:
    """Rank-one lift x~ x~^T + eps I with x~ the optionally unit-normalized input.

    Normalization divides by (||x|| + 1e-12), so the zero vector stays zero and
    the lift degenerates to eps I.
    """
    x = as_float_vector(x, "x")
    if eps <= 0:
        raise ConfigError(f"eps must be > 0, got {eps}")
    if normalize:
        x = x / (float(np.linalg.norm(x)) + NORM_DELTA)
    S = np.outer(x, x) + eps * np.eye(len(x))
    return SPDDescriptor(S, eps, "outer")


def local_cov_descriptor(
    x,
    train_X: np.ndarray,
    k: int,
    shrink: float = 0.1,
    eps: float = SPD_EPS,
) -> SPDDescriptor:
    """Shrunken covariance of the k nearest training rows around x.

    Neighbors are the k smallest Euclidean distances among training rows,
    ties broken by row index; a training row is its own nearest neighbor.
    """
    x = as_float_vector(x, "x")
    train_X = as_float_matrix(train_X, "train_X")
    n, p = train_X.shape
    if len(x) != p:
        raise ValueError(f"x has {len(x)} entries but train rows have {p}")
    if k < 2:
        raise ConfigError(f"k must be >= 2, got {k}")
    if k > n:
        raise ConfigError(f"k={k} exceeds the train size {n}")
    if not 0.0 <= shrink <= 1.0:
        raise ConfigError(f"shrink must lie in [0, 1], got {shrink}")
    if eps <= 0:
        raise ConfigError(f"eps must be > 0, got {eps}")
    d = np.linalg.norm(train_X - x, axis=1)
    nearest = np.argsort(d, kind="stable")[:k]
    hood = train_X[nearest]
    centered = hood - hood.mean(axis=0)
    cov = (centered.T @ centered) / (k - 1)
    target = (np.trace(cov) / p) * np.eye(p)
    S = (1.0 - shrink) * cov + shrink * target + eps * np.eye(p)
    return SPDDescriptor(S, eps, "local_cov")


def stein_divergence(A, B) -> float:
    A = _check_square_symmetric(A, "left matrix")
    B = _check_square_symmetric(B, "right matrix")
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch: {A.shape} vs {B.shape}")
    ld_a = _logdet_spd(A, "left matrix")
    ld_b = _logdet_spd(B, "right matrix")
    ld_mid = _logdet_spd(0.5 * (A + B), "midpoint matrix")
    return ld_mid - 0.5 * (ld_a + ld_b)


def stein_divergence_matrix(mats: np.ndarray, chunk: int = 32768) -> np.ndarray:
    """All pairwise Stein divergences of a stack of SPD matrices (m, p, p)."""
    mats = np.asarray(mats, dtype=float)
    if mats.ndim != 3 or mats.shape[1] != mats.shape[2]:
        raise ValueError(f"expected a stack of square matrices, got {mats.shape}")
    m = mats.shape[0]
    if m == 0:
        return np.zeros((0, 0))
    evals = np.linalg.eigvalsh(mats)
    if float(evals.min()) <= EIG_FLOOR:
        bad = int(np.argmin(evals.min(axis=1)))
        raise NumericError(f"matrix {bad} is not positive definite")
    logdets = np.sum(np.log(evals), axis=1)
    D = np.zeros((m, m))
    iu, ju = np.triu_indices(m, k=1)
    for start in range(0, len(iu), chunk):
        i = iu[start : start + chunk]
        j = ju[start : start + chunk]
        mid_evals = np.linalg.eigvalsh(0.5 * (mats[i] + mats[j]))
        vals = np.sum(np.log(mid_evals), axis=1) - 0.5 * (logdets[i] + logdets[j])
        D[i, j] = vals
        D[j, i] = vals
    return D


def matrix_log(S) -> np.ndarray:
    S = _check_square_symmetric(S, "matrix")
    evals, evecs = np.linalg.eigh(S)
    if float(evals[0]) <= EIG_FLOOR:
        raise NumericError(
            f"matrix log needs a positive definite input (min eigenvalue {evals[0]:.3e})"
        )
    out = (evecs * np.log(evals)) @ evecs.T
    return 0.5 * (out + out.T)


def matrix_exp(S) -> np.ndarray:
    S = _check_square_symmetric(S, "matrix")
    evals, evecs = np.linalg.eigh(S)
    out = (evecs * np.exp(evals)) @ evecs.T
    return 0.5 * (out + out.T)


def loge_interpolate(Sa, Sb, t: float) -> np.ndarray:
    """Log-Euclidean geodesic point exp((1-t) log Sa + t log Sb)."""
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"interpolation weight must lie in [0, 1], got {t}")
    La = matrix_log(Sa)
    Lb = matrix_log(Sb)
    return matrix_exp((1.0 - t) * La + t * Lb)


def synth_augment(descriptors, n_syn: int, seed: int) -> list:
    """Unlabeled synthetic descriptors: seeded geodesic interpolants between
    distinct training descriptor pairs."""
    descriptors = list(descriptors)
    if n_syn < 0:
        raise ConfigError(f"n_syn must be >= 0, got {n_syn}")
    if n_syn == 0:
        return []
    if len(descriptors) < 2:
        raise ConfigError("need at least two descriptors to interpolate")
    rng = seeded_rng(seed)
    out = []
    for _ in range(n_syn):
        a, b = rng.choice(len(descriptors), size=2, replace=False)
        t = float(rng.uniform())
        da, db = descriptors[a], descriptors[b]
        mat = loge_interpolate(da.matrix, db.matrix, t)
        out.append(SPDDescriptor(mat, min(da.eps, db.eps), "synthetic"))
    return out


def build_descriptor_pool(train_descriptors, n_syn: int, seed: int) -> list:
    """Clustering pool: train descriptors followed by synthetic interpolants.

    Only measured train descriptors are accepted; anything already tagged
    synthetic cannot be smuggled in as training material.
    """
    train_descriptors = list(train_descriptors)
    for i, d in enumerate(train_descriptors):
        if d.source == "synthetic":
            raise ConfigError(f"pool entry {i} is synthetic, not a train descriptor")
    return train_descriptors + synth_augment(train_descriptors, n_syn, seed)


# ---------------------------------------------------------------------------
# PAM medoids


def pam_medoids(D: np.ndarray, K: int, max_iter: int = 100, exhaustive_limit: int = 3000):
    """K-medoids on a precomputed divergence matrix.

    Small pools (at most ``exhaustive_limit`` candidate subsets) are solved by
    exact enumeration, which a greedy swap search cannot always match; larger
    pools use BUILD initialization plus best-improvement SWAP passes.  Ties are
    always broken toward the lowest index, so the result is a pure function of
    (D, K).  Returns (medoid indices, labels, total divergence).
    """
    D = as_float_matrix(D, "D")
    m = D.shape[0]
    if D.shape[1] != m:
        raise ValueError(f"distance matrix must be square, got {D.shape}")
    if K <= 0:
        raise ConfigError(f"K must be >= 1, got {K}")
    if K > m:
        raise ConfigError(f"K={K} exceeds the pool size {m}")
    if float(np.abs(D - D.T).max()) > _SYM_TOL * max(1.0, float(np.abs(D).max())):
        raise ValueError("divergence matrix must be symmetric")
    if float(np.abs(np.diag(D)).max()) > _SYM_TOL:
        raise ValueError("divergence matrix must have a zero diagonal")
    if float(D.min()) < -1e-10:
        raise ValueError("divergence matrix must be nonnegative")

    if math.comb(m, K) <= exhaustive_limit:
        best_subset, best_obj = None, np.inf
        for subset in itertools.combinations(range(m), K):
            obj = float(D[:, subset].min(axis=1).sum())
            if obj < best_obj:
                best_subset, best_obj = subset, obj
        cols = D[:, best_subset]
        nearest_pos = np.argmin(cols, axis=1)
        labels = np.asarray(best_subset, dtype=int)[nearest_pos]
        return tuple(best_subset), labels, best_obj

    # BUILD: greedy total-divergence minimization
    medoids = [int(np.argmin(D.sum(axis=1)))]
    d_near = D[medoids[0]].copy()
    while len(medoids) < K:
        td = np.minimum(d_near[None, :], D).sum(axis=1)
        td[medoids] = np.inf
        h = int(np.argmin(td))
        medoids.append(h)
        d_near = np.minimum(d_near, D[h])
    medoids = sorted(medoids)

    def state(meds):
        rows = D[meds]  # (K, m)
        order = np.argsort(rows, axis=0, kind="stable")
        d1 = rows[order[0], np.arange(m)]
        if len(meds) > 1:
            d2 = rows[order[1], np.arange(m)]
        else:
            d2 = np.full(m, np.inf)
        return np.asarray(order[0]), d1, d2

    for _ in range(max_iter):
        if K == m:
            break
        nearest_pos, d1, d2 = state(medoids)
        in_set = np.zeros(m, dtype=bool)
        in_set[medoids] = True
        candidates = np.flatnonzero(~in_set)
        if len(candidates) == 0:
            break
        base = np.minimum(D[candidates] - d1[None, :], 0.0)  # (nH, m)
        delta = np.repeat(base.sum(axis=1)[None, :], K, axis=0)  # (K, nH)
        for pos in range(K):
            mask = nearest_pos == pos
            if not mask.any():
                continue
            reassigned = np.minimum(D[candidates][:, mask], d2[mask][None, :])
            correction = (reassigned - d1[mask][None, :] - base[:, mask]).sum(axis=1)
            delta[pos] += correction
        flat = int(np.argmin(delta))
        best = float(delta.flat[flat])
        if best >= 0.0:
            break
        pos, h = divmod(flat, len(candidates))
        medoids[pos] = int(candidates[h])
        medoids = sorted(medoids)

    nearest_pos, d1, _ = state(medoids)
    labels = np.asarray(medoids, dtype=int)[nearest_pos]
    return tuple(medoids), labels, float(d1.sum())


def spd_distance_features(S, prototypes) -> np.ndarray:
    """Stein divergences from one matrix to each prototype, as a length-K vector."""
    mats = [p.matrix if isinstance(p, SPDDescriptor) else p for p in prototypes]
    S = S.matrix if isinstance(S, SPDDescriptor) else S
    return np.array([stein_divergence(S, P) for P in mats])


# ---------------------------------------------------------------------------
# distance-feature model

_POOL_CACHE: OrderedDict = OrderedDict()
_POOL_CACHE_MAX = 8


def _cached_pool(X: np.ndarray, cfg: tuple, builder):
    key = (hashlib.sha256(X.tobytes()).hexdigest(), X.shape, cfg)
    if key in _POOL_CACHE:
        _POOL_CACHE.move_to_end(key)
        return _POOL_CACHE[key]
    value = builder()
    _POOL_CACHE[key] = value
    if len(_POOL_CACHE) > _POOL_CACHE_MAX:
        _POOL_CACHE.popitem(last=False)
    return value


class SPDDistanceRidge(BaseEstimator, RegressorMixin):
    """Ridge on [features, Stein distances to K medoid prototypes].

    With ``n_medoids=0`` the model is exactly the plain ridge on the input
    features.  The clustering pool is train descriptors plus optional
    synthetic interpolants; it is assembled inside ``fit`` and the prototypes
    are frozen afterwards, so test rows can never influence them.
    """

    def __init__(
        self,
        n_medoids: int = 3,
        descriptor: str = "outer",
        normalize: bool = False,
        eps: float = SPD_EPS,
        knn: int = 8,
        shrink: float = 0.1,
        n_syn: int = 0,
        seed: int = 0,
        alpha: float = 1.0,
        max_iter: int = 100,
    ):
        self.n_medoids = n_medoids
        self.descriptor = descriptor
        self.normalize = normalize
        self.eps = eps
        self.knn = knn
        self.shrink = shrink
        self.n_syn = n_syn
        self.seed = seed
        self.alpha = alpha
        self.max_iter = max_iter

    def _describe(self, rows: np.ndarray, train_X: np.ndarray) -> list:
        if self.descriptor == "outer":
            return [outer_descriptor(x, self.normalize, self.eps) for x in rows]
        if self.descriptor == "local_cov":
            return [
                local_cov_descriptor(x, train_X, self.knn, self.shrink, self.eps)
                for x in rows
            ]
        raise ConfigError(f"unknown descriptor kind {self.descriptor!r}")

    def fit(self, X, y):
        X = as_float_matrix(X)
        y = as_float_vector(y)
        check_same_rows(X, y)
        if self.n_medoids < 0:
            raise ConfigError(f"n_medoids must be >= 0, got {self.n_medoids}")
        self.train_X_ = X.copy()
        train_desc = self._describe(X, X)
        if self.n_medoids == 0:
            self.medoid_set_ = MedoidSet((), (), len(train_desc), 0, self.seed, 0.0)
            train_features = X
        else:
            cfg = (
                self.descriptor,
                self.normalize,
                float(self.eps),
                self.knn,
                float(self.shrink),
                int(self.n_syn),
                int(self.seed),
            )

            def build():
                pool = build_descriptor_pool(train_desc, self.n_syn, self.seed)
                mats = np.stack([d.matrix for d in pool])
                return pool, stein_divergence_matrix(mats)

            pool, D = _cached_pool(X, cfg, build)
            if self.n_medoids > len(pool):
                raise ConfigError(
                    f"n_medoids={self.n_medoids} exceeds the pool size {len(pool)}"
                )
            medoids, _, objective = pam_medoids(D, self.n_medoids, self.max_iter)
            self.medoid_set_ = MedoidSet(
                tuple(pool[k] for k in medoids),
                medoids,
                len(train_desc),
                len(pool) - len(train_desc),
                self.seed,
                objective,
            )
            dist = D[: len(train_desc)][:, list(medoids)]
            train_features = np.hstack([X, dist])
        self.head_ = RidgeRegressor(alpha=self.alpha).fit(train_features, y)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        ensure_fitted(self, "head_")
        X = as_float_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"model was fitted with {self.n_features_in_} features, got {X.shape[1]}"
            )
        if self.n_medoids == 0:
            return self.head_.predict(X)
        desc = self._describe(X, self.train_X_)
        dist = np.stack([spd_distance_features(d, self.medoid_set_.prototypes) for d in desc])
        return self.head_.predict(np.hstack([X, dist]))


def spd_pipeline_fit(
    X,
    y,
    config: dict | None = None,
    alpha_grid=(1e-3, 1e-2, 1e-1, 1.0, 10.0),
    n_folds: int = 5,
    cv_seed: int = 0,
) -> SPDDistanceRidge:
    """Convenience end-to-end fit with the head penalty selected by CV.

    Rows are dealt into seeded folds; the alpha with the lowest mean validation
    RMSE wins (ties go to the earlier grid entry) and the winner is refitted
    on all rows.
    """
    X = as_float_matrix(X)
    y = as_float_vector(y)
    config = dict(config or {})
    n = len(y)
    if n < 2 * n_folds:
        raise ConfigError(f"need at least {2 * n_folds} rows for {n_folds}-fold CV")
    perm = seeded_rng(cv_seed).permutation(n)
    folds = [perm[k::n_folds] for k in range(n_folds)]
    best_alpha, best_rmse = None, np.inf
    for alpha in alpha_grid:
        errors = []
        for val in folds:
            fit_rows = np.setdiff1d(perm, val)
            model = SPDDistanceRidge(alpha=alpha, **config).fit(X[fit_rows], y[fit_rows])
            pred = model.predict(X[val])
            errors.append(float(np.sqrt(np.mean((pred - y[val]) ** 2))))
        mean_rmse = float(np.mean(errors))
        if mean_rmse < best_rmse:
            best_alpha, best_rmse = alpha, mean_rmse
    return SPDDistanceRidge(alpha=best_alpha, **config).fit(X, y)


def dump_divergence_csv(D: np.ndarray, path) -> None:
    """Write a pairwise divergence matrix with stable formatting."""
    D = as_float_matrix(D, "D")
    with open(path, "w") as fh:
        for row in D:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def dump_medoids_csv(medoid_set: MedoidSet, path) -> None:
    with open(path, "w") as fh:
        fh.write("medoid_index,pool_train,pool_synthetic,seed,objective\n")
        for k in medoid_set.indices:
            fh.write(
                f"{k},{medoid_set.train_count},{medoid_set.synthetic_count},"
                f"{medoid_set.seed},{repr(medoid_set.objective)}\n"
            )
