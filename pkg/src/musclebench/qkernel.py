"""Exact statevector simulation of angle-encoded feature maps and the three
kernel models built on them.

The encoder prepares, per sample, the pure state obtained from |0...0> by L
repetitions of [RY(s*theta_j) on every qubit, then a CNOT ring].  All gates
have real matrix entries, so amplitudes stay real and states are simulated as
float64 batches.  Qubit 0 is the most significant bit of the amplitude index.

Models: full fidelity-kernel ridge (dual form), clustered center features with
optional whitening (primal Nystrom form), and a variational circuit trained by
parameter-shift gradient descent with an exact least-squares linear head.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator, RegressorMixin

from .errors import ConfigError, NumericError
from .linmodels import RidgeRegressor
from .util import as_float_matrix, as_float_vector, check_same_rows, ensure_fitted, stable_fingerprint

WHITEN_FLOOR = 1e-10
KMEANS_TOL = 1e-10
KMEANS_MAX_ITER = 300


@dataclass(frozen=True)
class FeatureMapConfig:
    """Circuit shape for the angle encoder."""

    qubits: int
    layers: int = 1
    scale: float = 1.0
    entangler: str = "ring"

    def __post_init__(self):
        if self.qubits < 1:
            raise ConfigError(f"qubits must be >= 1, got {self.qubits}")
        if self.layers < 1:
            raise ConfigError(f"layers must be >= 1, got {self.layers}")
        if self.scale <= 0:
            raise ConfigError(f"angle scale must be > 0, got {self.scale}")
        if self.entangler not in ("ring", "none"):
            raise ConfigError(f"entangler must be ring or none, got {self.entangler!r}")


def _cnot_index_map(q: int, control: int, target: int) -> np.ndarray:
    # qubit j lives at bit position q-1-j of the amplitude index
    idx = np.arange(2**q)
    ctrl_on = (idx >> (q - 1 - control)) & 1 == 1
    out = idx.copy()
    out[ctrl_on] = idx[ctrl_on] ^ (1 << (q - 1 - target))
    return out


def _ring_permutation(q: int) -> np.ndarray:
    perm = np.arange(2**q)
    for j in range(q):
        perm = perm[_cnot_index_map(q, j, (j + 1) % q)]
    return perm


def _apply_ry(states: np.ndarray, qubit: int, q: int, half_angles: np.ndarray) -> np.ndarray:
    """RY with per-sample angles on one qubit of a (n, 2^q) real batch."""
    n = states.shape[0]
    pre = 2**qubit
    post = 2 ** (q - 1 - qubit)
    view = states.reshape(n, pre, 2, post)
    c = np.cos(half_angles).reshape(n, 1, 1)
    s = np.sin(half_angles).reshape(n, 1, 1)
    a0 = view[:, :, 0, :]
    a1 = view[:, :, 1, :]
    new0 = c * a0 - s * a1
    new1 = s * a0 + c * a1
    out = np.empty_like(view)
    out[:, :, 0, :] = new0
    out[:, :, 1, :] = new1
    return out.reshape(n, 2**q)


def encode_states(thetas, cfg: FeatureMapConfig) -> np.ndarray:
    """Batch of encoded statevectors, shape (n, 2^qubits), real amplitudes."""
    thetas = as_float_matrix(thetas, "thetas")
    n, q = thetas.shape
    if q != cfg.qubits:
        raise ValueError(f"angle rows have {q} entries but the map uses {cfg.qubits} qubits")
    states = np.zeros((n, 2**q))
    states[:, 0] = 1.0
    ring = _ring_permutation(q) if (cfg.entangler == "ring" and q > 1) else None
    half = 0.5 * cfg.scale * thetas
    for _ in range(cfg.layers):
        for j in range(q):
            states = _apply_ry(states, j, q, half[:, j])
        if ring is not None:
            states = states[:, ring]
    return states


def build_feature_state(theta, cfg: FeatureMapConfig) -> np.ndarray:
    """Single encoded state as a complex amplitude vector."""
    theta = as_float_vector(theta, "theta")
    return encode_states(theta.reshape(1, -1), cfg)[0].astype(np.complex128)


def fidelity_kernel(theta_a, theta_b, cfg: FeatureMapConfig) -> float:
    """|<psi(a)|psi(b)>|^2, in [0, 1]."""
    pair = np.vstack([as_float_vector(theta_a, "theta_a"), as_float_vector(theta_b, "theta_b")])
    states = encode_states(pair, cfg)
    return float(np.dot(states[0], states[1]) ** 2)


@dataclass(frozen=True)
class GramBundle:
    """A kernel matrix plus the transform state it carries."""

    K: np.ndarray
    power: float = 1.0
    centered: bool = False
    col_means: np.ndarray | None = None
    grand_mean: float | None = None
    psd_repaired: bool = False


def gram_matrix(thetas, cfg: FeatureMapConfig) -> GramBundle:
    """Raw fidelity Gram; each unordered pair computed once, exact symmetry."""
    V = encode_states(thetas, cfg)
    G = (V @ V.T) ** 2
    upper = np.triu(G, k=1)
    K = upper + upper.T + np.diag(np.diag(G))
    return GramBundle(K)


def cross_gram(thetas_rows, thetas_cols, cfg: FeatureMapConfig, power: float = 1.0) -> np.ndarray:
    """Rectangular fidelity block, entrywise powered (no PSD repair possible)."""
    Vr = encode_states(thetas_rows, cfg)
    Vc = encode_states(thetas_cols, cfg)
    K = (Vr @ Vc.T) ** 2
    return K if power == 1.0 else K**power


def kernel_power(bundle: GramBundle, p: float) -> GramBundle:
    """Entrywise K^p with eigenvalue clamping; powering can break PSD."""
    if not 0.0 < p <= 1.0:
        raise ConfigError(f"kernel power must lie in (0, 1], got {p}")
    if bundle.centered:
        raise ConfigError("power must be applied before centering")
    if p == 1.0:
        return replace(bundle, power=1.0)
    Kp = bundle.K**p
    evals, evecs = np.linalg.eigh(Kp)
    repaired = bool(evals[0] < 0.0)
    if repaired:
        Kp = (evecs * np.clip(evals, 0.0, None)) @ evecs.T
        Kp = 0.5 * (Kp + Kp.T)
    return GramBundle(Kp, power=p, psd_repaired=repaired)


def center_gram(bundle: GramBundle) -> GramBundle:
    """Double-centered Gram K_c = H K H plus the statistics test rows need."""
    K = bundle.K
    col_means = K.mean(axis=0)
    grand = float(K.mean())
    K_c = K - col_means[None, :] - col_means[:, None] + grand
    return GramBundle(
        K_c,
        power=bundle.power,
        centered=True,
        col_means=col_means,
        grand_mean=grand,
        psd_repaired=bundle.psd_repaired,
    )


def center_test_rows(k: np.ndarray, col_means: np.ndarray, grand_mean: float) -> np.ndarray:
    """Center cross-kernel rows against stored train statistics."""
    k = as_float_matrix(k, "k")
    return k - col_means[None, :] - k.mean(axis=1, keepdims=True) + grand_mean


def qkr_solve(K: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
    """Dual coefficients alpha = (K + lam I)^-1 y via Cholesky."""
    K = as_float_matrix(K, "K")
    y = as_float_vector(y, "y")
    if lam < 0:
        raise ConfigError(f"lambda must be >= 0, got {lam}")
    system = K + lam * np.eye(len(K))
    try:
        factor = scipy.linalg.cho_factor(system, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise NumericError(
            f"kernel system factorization failed ({exc}); increase lambda"
        ) from exc
    alpha = scipy.linalg.cho_solve(factor, y)
    if not np.all(np.isfinite(alpha)):
        raise NumericError("kernel solve produced non-finite coefficients; increase lambda")
    return alpha


class QuantumKernelRidge(BaseEstimator, RegressorMixin):
    """Kernel ridge on the fidelity kernel of angle-encoded states.

    With ``center=True`` (default) the Gram and the targets are centered with
    train statistics and predictions add the train mean back.  The kernel
    power is applied before centering; a PSD repair after powering is flagged
    on the fitted model.
    """

    def __init__(
        self,
        layers: int = 1,
        scale: float = 1.0,
        entangler: str = "ring",
        power: float = 1.0,
        lam: float = 1e-3,
        center: bool = True,
    ):
        self.layers = layers
        self.scale = scale
        self.entangler = entangler
        self.power = power
        self.lam = lam
        self.center = center

    def _cfg(self, q: int) -> FeatureMapConfig:
        return FeatureMapConfig(q, self.layers, self.scale, self.entangler)

    def fit(self, X, y):
        X = as_float_matrix(X)
        y = as_float_vector(y)
        check_same_rows(X, y)
        cfg = self._cfg(X.shape[1])
        bundle = kernel_power(gram_matrix(X, cfg), self.power)
        self.psd_repaired_ = bundle.psd_repaired
        if self.center:
            bundle = center_gram(bundle)
            self.y_mean_ = float(y.mean())
            y_solve = y - self.y_mean_
        else:
            self.y_mean_ = 0.0
            y_solve = y
        self.alpha_ = qkr_solve(bundle.K, y_solve, self.lam)
        self.bundle_ = bundle
        self.train_thetas_ = X.copy()
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        ensure_fitted(self, "alpha_")
        X = as_float_matrix(X)
        cfg = self._cfg(self.n_features_in_)
        k = cross_gram(X, self.train_thetas_, cfg, power=self.power)
        if self.center:
            k = center_test_rows(k, self.bundle_.col_means, self.bundle_.grand_mean)
        return k @ self.alpha_ + self.y_mean_


def kmeans_angles(thetas, K: int, seed: int):
    """Seeded k-means++ then Lloyd iterations in angle space.

    Stops when the largest center shift drops below 1e-10 or after 300
    rounds; an emptied cluster claims the point farthest from its center.
    """
    thetas = as_float_matrix(thetas, "thetas")
    n = thetas.shape[0]
    if K <= 0:
        raise ConfigError(f"K must be >= 1, got {K}")
    if K > n:
        raise ConfigError(f"K={K} exceeds the number of points {n}")
    rng = np.random.default_rng(seed)

    centers = np.empty((K, thetas.shape[1]))
    centers[0] = thetas[int(rng.integers(n))]
    d2 = np.sum((thetas - centers[0]) ** 2, axis=1)
    for k in range(1, K):
        total = float(d2.sum())
        if total <= 0.0:
            # all remaining points coincide with a center; take the lowest
            # index not yet duplicated for determinism
            centers[k] = thetas[k % n]
        else:
            pick = int(rng.choice(n, p=d2 / total))
            centers[k] = thetas[pick]
        d2 = np.minimum(d2, np.sum((thetas - centers[k]) ** 2, axis=1))

    for _ in range(KMEANS_MAX_ITER):
        dists = ((thetas[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = np.argmin(dists, axis=1)
        new_centers = centers.copy()
        for k in range(K):
            members = labels == k
            if members.any():
                new_centers[k] = thetas[members].mean(axis=0)
        empty = [k for k in range(K) if not np.any(labels == k)]
        if empty:
            assigned = dists[np.arange(n), labels]
            order = np.argsort(-assigned, kind="stable")
            for k, point in zip(empty, order):
                new_centers[k] = thetas[point]
        shift = float(np.max(np.linalg.norm(new_centers - centers, axis=1)))
        centers = new_centers
        if shift < KMEANS_TOL:
            break
    return centers


def whitening_root(K_mm: np.ndarray, floor: float = WHITEN_FLOOR) -> np.ndarray:
    """Pseudo inverse square root of a center Gram, eigenvalues under the
    floor dropped."""
    K_mm = as_float_matrix(K_mm, "K_mm")
    evals, evecs = np.linalg.eigh(0.5 * (K_mm + K_mm.T))
    inv_root = np.where(evals >= floor, 1.0 / np.sqrt(np.maximum(evals, floor)), 0.0)
    W = (evecs * inv_root) @ evecs.T
    return 0.5 * (W + W.T)


class QuantumKernelFeatures(BaseEstimator, RegressorMixin):
    """Ridge on fidelities to a small set of centers (primal Nystrom form).

    ``n_centers`` is an integer (k-means in angle space) or "all" (every
    training row is a center).  With whitening, centers = all training rows,
    and ``fit_intercept=False``, the model reproduces the uncentered dual
    kernel solution with the same penalty.
    """

    def __init__(
        self,
        n_centers=3,
        layers: int = 1,
        scale: float = 1.0,
        entangler: str = "ring",
        power: float = 1.0,
        lam: float = 1e-3,
        whiten: bool = True,
        fit_intercept: bool = True,
        seed: int = 0,
    ):
        self.n_centers = n_centers
        self.layers = layers
        self.scale = scale
        self.entangler = entangler
        self.power = power
        self.lam = lam
        self.whiten = whiten
        self.fit_intercept = fit_intercept
        self.seed = seed

    def _cfg(self, q: int) -> FeatureMapConfig:
        return FeatureMapConfig(q, self.layers, self.scale, self.entangler)

    def fit(self, X, y):
        X = as_float_matrix(X)
        y = as_float_vector(y)
        check_same_rows(X, y)
        if not 0.0 < self.power <= 1.0:
            raise ConfigError(f"kernel power must lie in (0, 1], got {self.power}")
        cfg = self._cfg(X.shape[1])
        if self.n_centers == "all":
            centers = X.copy()
        else:
            centers = kmeans_angles(X, int(self.n_centers), self.seed)
        self.centers_ = centers
        if self.whiten:
            K_mm = cross_gram(centers, centers, cfg, power=self.power)
            self.whitener_ = whitening_root(0.5 * (K_mm + K_mm.T))
        else:
            self.whitener_ = None
        self.head_ = RidgeRegressor(alpha=self.lam, fit_intercept=self.fit_intercept).fit(
            self._features(X, cfg), y
        )
        self.n_features_in_ = X.shape[1]
        return self

    def _features(self, X: np.ndarray, cfg: FeatureMapConfig) -> np.ndarray:
        phi = cross_gram(X, self.centers_, cfg, power=self.power)
        if self.whitener_ is not None:
            phi = phi @ self.whitener_
        return phi

    def predict(self, X):
        ensure_fitted(self, "head_")
        X = as_float_matrix(X)
        cfg = self._cfg(self.n_features_in_)
        return self.head_.predict(self._features(X, cfg))


def qkf_features(theta, model: QuantumKernelFeatures) -> np.ndarray:
    """Center-fidelity feature vector for one angle row, post-whitening."""
    ensure_fitted(model, "head_")
    theta = as_float_vector(theta, "theta")
    cfg = model._cfg(model.n_features_in_)
    return model._features(theta.reshape(1, -1), cfg)[0]


# ---------------------------------------------------------------------------
# variational regressor


def _z_signs(q: int) -> np.ndarray:
    idx = np.arange(2**q)
    signs = np.empty((2**q, q))
    for j in range(q):
        signs[:, j] = 1.0 - 2.0 * ((idx >> (q - 1 - j)) & 1)
    return signs


def vqr_measurements(thetas, W: np.ndarray, cfg: FeatureMapConfig) -> np.ndarray:
    """Per-qubit Z expectations after encoder + trainable rotation layers.

    W has shape (var_layers, qubits); each trainable layer applies RY(W[v,j])
    on qubit j followed by a CNOT ring (no-op on one qubit).
    """
    thetas = as_float_matrix(thetas, "thetas")
    q = cfg.qubits
    states = encode_states(thetas, cfg)
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[1] != q:
        raise ValueError(f"weights must be (layers, {q}), got {W.shape}")
    ring = _ring_permutation(q) if q > 1 else None
    n = states.shape[0]
    for v in range(W.shape[0]):
        for j in range(q):
            states = _apply_ry(states, j, q, np.full(n, 0.5 * W[v, j]))
        if ring is not None:
            states = states[:, ring]
    return (states**2) @ _z_signs(q)


def parameter_shift_gradient(thetas, resid, W, head_w, cfg: FeatureMapConfig) -> np.ndarray:
    """Gradient of mean((pred - y)^2) in the circuit weights by the exact
    +-pi/2 shift rule, with the linear head held fixed.

    ``resid`` is pred - y at the current parameters.
    """
    W = np.asarray(W, dtype=float)
    resid = as_float_vector(resid, "resid")
    grad = np.zeros_like(W)
    for v in range(W.shape[0]):
        for j in range(W.shape[1]):
            shift = np.zeros_like(W)
            shift[v, j] = 0.5 * np.pi
            dM = 0.5 * (
                vqr_measurements(thetas, W + shift, cfg)
                - vqr_measurements(thetas, W - shift, cfg)
            )
            grad[v, j] = float(2.0 * np.mean(resid * (dM @ head_w)))
    return grad


class VariationalQuantumRegressor(BaseEstimator, RegressorMixin):
    """Angle encoder, trainable Y-rotation layers with ring entanglers,
    per-qubit Z expectations, and a linear head.

    Each epoch solves the head exactly by least squares on the current
    measurements, then takes one gradient step on the circuit weights using
    parameter-shift derivatives of the mean squared error.  If the final loss
    exceeds the best seen, the best snapshot is restored and flagged.
    """

    def __init__(
        self,
        var_layers: int = 2,
        layers: int = 1,
        scale: float = 1.0,
        entangler: str = "ring",
        lr: float = 0.1,
        epochs: int = 300,
        seed: int = 0,
    ):
        self.var_layers = var_layers
        self.layers = layers
        self.scale = scale
        self.entangler = entangler
        self.lr = lr
        self.epochs = epochs
        self.seed = seed

    def _cfg(self, q: int) -> FeatureMapConfig:
        return FeatureMapConfig(q, self.layers, self.scale, self.entangler)

    def fit(self, X, y):
        X = as_float_matrix(X)
        y = as_float_vector(y)
        check_same_rows(X, y)
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.var_layers < 1:
            raise ConfigError(f"var_layers must be >= 1, got {self.var_layers}")
        q = X.shape[1]
        cfg = self._cfg(q)
        rng = np.random.default_rng(self.seed)
        W = rng.normal(0.0, 0.1, size=(self.var_layers, q))
        w = rng.normal(0.0, 1.0, size=q)
        b = 0.0

        def loss(W_, w_, b_):
            pred = vqr_measurements(X, W_, cfg) @ w_ + b_
            return float(np.mean((pred - y) ** 2))

        self.loss_log_ = [loss(W, w, b)]
        best = (self.loss_log_[0], W.copy(), w.copy(), b)
        for _ in range(self.epochs):
            M = vqr_measurements(X, W, cfg)
            design = np.column_stack([M, np.ones(len(M))])
            theta_head, *_ = np.linalg.lstsq(design, y, rcond=None)
            w, b = theta_head[:-1], float(theta_head[-1])
            resid = design @ theta_head - y
            W = W - self.lr * parameter_shift_gradient(X, resid, W, w, cfg)
            current = loss(W, w, b)
            self.loss_log_.append(current)
            if current < best[0]:
                best = (current, W.copy(), w.copy(), b)
        self.snapshot_restored_ = bool(self.loss_log_[-1] > best[0])
        if self.snapshot_restored_:
            _, W, w, b = best
        self.W_ = W
        self.head_w_ = w
        self.head_b_ = b
        self.final_loss_ = loss(W, w, b)
        self.n_features_in_ = q
        return self

    def predict(self, X):
        ensure_fitted(self, "W_")
        X = as_float_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"model was fitted on {self.n_features_in_} angles, got {X.shape[1]}"
            )
        cfg = self._cfg(self.n_features_in_)
        return vqr_measurements(X, self.W_, cfg) @ self.head_w_ + self.head_b_


def dump_gram_csv(bundle: GramBundle, cfg: FeatureMapConfig, path) -> None:
    """Write a Gram matrix with its configuration fingerprint for audits."""
    tag = stable_fingerprint(
        {
            "qubits": cfg.qubits,
            "layers": cfg.layers,
            "scale": cfg.scale,
            "entangler": cfg.entangler,
            "power": bundle.power,
            "centered": bundle.centered,
            "psd_repaired": bundle.psd_repaired,
        }
    )
    with open(path, "w") as fh:
        fh.write(f"# config {tag}\n")
        for row in bundle.K:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
