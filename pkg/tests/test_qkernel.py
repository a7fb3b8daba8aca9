"""Statevector encoder, fidelity kernels, and the three kernel models."""
import itertools

import numpy as np
import pytest

from musclebench.errors import ConfigError, FitError, NumericError
from musclebench.qkernel import (
    FeatureMapConfig,
    GramBundle,
    QuantumKernelFeatures,
    QuantumKernelRidge,
    VariationalQuantumRegressor,
    build_feature_state,
    center_gram,
    center_test_rows,
    cross_gram,
    dump_gram_csv,
    encode_states,
    fidelity_kernel,
    gram_matrix,
    kernel_power,
    kmeans_angles,
    parameter_shift_gradient,
    qkf_features,
    qkr_solve,
    vqr_measurements,
    whitening_root,
)

# ---------------------------------------------------------------------------
# independent dense gate-algebra oracle


def ry_matrix(angle):
    h = 0.5 * angle
    return np.array([[np.cos(h), -np.sin(h)], [np.sin(h), np.cos(h)]])


def dense_cnot(q, control, target):
    U = np.zeros((2**q, 2**q))
    for i in range(2**q):
        if (i >> (q - 1 - control)) & 1:
            U[i ^ (1 << (q - 1 - target)), i] = 1.0
        else:
            U[i, i] = 1.0
    return U


def dense_encode(theta, q, layers, scale, entangler):
    state = np.zeros(2**q)
    state[0] = 1.0
    for _ in range(layers):
        rot = np.array([[1.0]])
        for j in range(q):
            rot = np.kron(rot, ry_matrix(scale * theta[j]))
        state = rot @ state
        if entangler == "ring" and q > 1:
            for j in range(q):
                state = dense_cnot(q, j, (j + 1) % q) @ state
    return state


class TestEncoder:
    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(30)
        for q in (1, 2, 3):
            for layers in (1, 2):
                for scale in (0.7, 1.0, 1.9):
                    for ent in ("ring", "none"):
                        cfg = FeatureMapConfig(q, layers, scale, ent)
                        thetas = rng.uniform(-np.pi, np.pi, size=(4, q))
                        got = encode_states(thetas, cfg)
                        for i, theta in enumerate(thetas):
                            oracle = dense_encode(theta, q, layers, scale, ent)
                            np.testing.assert_allclose(got[i], oracle, atol=1e-12)

    def test_single_qubit_basis_cases(self):
        cfg = FeatureMapConfig(1)
        np.testing.assert_allclose(build_feature_state([0.0], cfg), [1.0, 0.0], atol=1e-15)
        np.testing.assert_allclose(build_feature_state([np.pi], cfg), [0.0, 1.0], atol=1e-15)

    def test_two_qubit_hand_example(self):
        cfg = FeatureMapConfig(2)
        state = encode_states(np.array([[np.pi / 2, 0.0]]), cfg)[0]
        c, s = np.cos(np.pi / 4), np.sin(np.pi / 4)
        np.testing.assert_allclose(state, [c, s, 0.0, 0.0], atol=1e-15)

    def test_unit_norm_preserved(self):
        rng = np.random.default_rng(31)
        for _ in range(20):
            q = int(rng.integers(1, 5))
            cfg = FeatureMapConfig(q, int(rng.integers(1, 4)), float(rng.uniform(0.3, 2.5)))
            states = encode_states(rng.normal(size=(6, q)), cfg)
            np.testing.assert_allclose((states**2).sum(axis=1), np.ones(6), atol=1e-12)

    def test_state_is_complex_publicly(self):
        state = build_feature_state([0.3, 0.7], FeatureMapConfig(2))
        assert state.dtype == np.complex128
        assert abs(np.vdot(state, state) - 1.0) < 1e-12

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            encode_states(np.zeros((2, 3)), FeatureMapConfig(2))

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            FeatureMapConfig(0)
        with pytest.raises(ConfigError):
            FeatureMapConfig(2, layers=0)
        with pytest.raises(ConfigError):
            FeatureMapConfig(2, scale=0.0)
        with pytest.raises(ConfigError):
            FeatureMapConfig(2, entangler="mesh")


class TestFidelityKernel:
    def test_self_fidelity_one(self):
        rng = np.random.default_rng(32)
        cfg = FeatureMapConfig(3, layers=2)
        for _ in range(10):
            theta = rng.normal(size=3)
            assert abs(fidelity_kernel(theta, theta, cfg) - 1.0) < 1e-12

    def test_single_qubit_closed_form(self):
        cfg = FeatureMapConfig(1)
        grid = np.linspace(-np.pi, np.pi, 50)
        for ta in grid:
            for tb in grid:
                got = fidelity_kernel([ta], [tb], cfg)
                assert abs(got - np.cos((ta - tb) / 2.0) ** 2) <= 1e-12

    def test_half_pi_pair(self):
        assert abs(fidelity_kernel([np.pi / 2], [0.0], FeatureMapConfig(1)) - 0.5) < 1e-12

    def test_tiny_scale_collapses_to_one(self):
        cfg = FeatureMapConfig(3, scale=1e-8)
        rng = np.random.default_rng(33)
        for _ in range(5):
            k = fidelity_kernel(rng.normal(size=3), rng.normal(size=3), cfg)
            assert abs(k - 1.0) < 1e-12

    def test_symmetry(self):
        cfg = FeatureMapConfig(2, layers=3, scale=1.4)
        rng = np.random.default_rng(34)
        a, b = rng.normal(size=2), rng.normal(size=2)
        assert fidelity_kernel(a, b, cfg) == fidelity_kernel(b, a, cfg)

    def test_qubit_permutation_invariance_without_entangler(self):
        cfg = FeatureMapConfig(4, layers=2, scale=0.9, entangler="none")
        rng = np.random.default_rng(35)
        a, b = rng.normal(size=4), rng.normal(size=4)
        perm = np.array([2, 0, 3, 1])
        k1 = fidelity_kernel(a, b, cfg)
        k2 = fidelity_kernel(a[perm], b[perm], cfg)
        assert abs(k1 - k2) <= 1e-12


class TestGram:
    def test_diagonal_ones_and_exact_symmetry(self):
        rng = np.random.default_rng(36)
        bundle = gram_matrix(rng.normal(size=(15, 3)), FeatureMapConfig(3, layers=2))
        np.testing.assert_allclose(np.diag(bundle.K), np.ones(15), atol=1e-10)
        np.testing.assert_array_equal(bundle.K, bundle.K.T)
        assert not bundle.centered and bundle.power == 1.0

    def test_two_point_gram(self):
        bundle = gram_matrix(np.array([[np.pi / 2], [0.0]]), FeatureMapConfig(1))
        assert abs(bundle.K[0, 1] - 0.5) < 1e-12

    def test_psd_random_sets(self):
        rng = np.random.default_rng(37)
        for _ in range(5):
            n = int(rng.integers(10, 65))
            q = int(rng.integers(1, 5))
            cfg = FeatureMapConfig(q, int(rng.integers(1, 4)), float(rng.uniform(0.5, 2.0)))
            K = gram_matrix(rng.uniform(0, np.pi, size=(n, q)), cfg).K
            assert np.linalg.eigvalsh(K)[0] >= -1e-8

    def test_entry_recomputation_is_bit_identical(self):
        rng = np.random.default_rng(38)
        thetas = rng.normal(size=(8, 2))
        cfg = FeatureMapConfig(2, layers=2)
        np.testing.assert_array_equal(gram_matrix(thetas, cfg).K, gram_matrix(thetas, cfg).K)

    def test_cross_gram_consistent_with_square(self):
        rng = np.random.default_rng(39)
        thetas = rng.normal(size=(6, 2))
        cfg = FeatureMapConfig(2)
        C = cross_gram(thetas, thetas, cfg)
        np.testing.assert_allclose(C, gram_matrix(thetas, cfg).K, atol=1e-13)


class TestKernelPower:
    def test_identity_power_unchanged(self):
        rng = np.random.default_rng(40)
        bundle = gram_matrix(rng.normal(size=(6, 2)), FeatureMapConfig(2))
        out = kernel_power(bundle, 1.0)
        np.testing.assert_array_equal(out.K, bundle.K)
        assert not out.psd_repaired

    def test_entrywise_value(self):
        bundle = GramBundle(np.array([[1.0, 0.25], [0.25, 1.0]]))
        out = kernel_power(bundle, 0.5)
        assert abs(out.K[0, 1] - 0.5) < 1e-12

    def test_repair_floors_eigenvalues(self):
        rng = np.random.default_rng(41)
        bundle = gram_matrix(rng.uniform(0, np.pi, size=(5, 2)), FeatureMapConfig(2, layers=2))
        out = kernel_power(bundle, 0.5)
        assert np.linalg.eigvalsh(out.K)[0] >= -1e-12
        assert out.power == 0.5

    def test_invalid_power_rejected(self):
        bundle = GramBundle(np.eye(2))
        for p in (0.0, -0.5, 1.5):
            with pytest.raises(ConfigError):
                kernel_power(bundle, p)

    def test_power_after_centering_rejected(self):
        bundle = center_gram(GramBundle(np.eye(3)))
        with pytest.raises(ConfigError):
            kernel_power(bundle, 0.5)


class TestCentering:
    def test_hand_two_by_two(self):
        bundle = center_gram(GramBundle(np.array([[1.0, 0.5], [0.5, 1.0]])))
        np.testing.assert_allclose(bundle.K, [[0.25, -0.25], [-0.25, 0.25]], atol=1e-15)
        assert bundle.centered

    def test_row_sums_vanish(self):
        rng = np.random.default_rng(42)
        bundle = center_gram(gram_matrix(rng.normal(size=(9, 3)), FeatureMapConfig(3)))
        assert np.abs(bundle.K.sum(axis=1)).max() <= 1e-10

    def test_idempotent(self):
        rng = np.random.default_rng(43)
        once = center_gram(gram_matrix(rng.normal(size=(7, 2)), FeatureMapConfig(2)))
        twice = center_gram(once)
        np.testing.assert_allclose(twice.K, once.K, atol=1e-12)

    def test_train_rows_center_like_the_gram(self):
        rng = np.random.default_rng(44)
        raw = gram_matrix(rng.normal(size=(8, 2)), FeatureMapConfig(2))
        centered = center_gram(raw)
        rows = center_test_rows(raw.K, centered.col_means, centered.grand_mean)
        np.testing.assert_allclose(rows, centered.K, atol=1e-13)


class TestQKRSolve:
    def test_identity_system(self):
        y = np.array([2.0, -4.0, 6.0])
        np.testing.assert_allclose(qkr_solve(np.eye(3), y, 1.0), y / 2.0, atol=1e-14)

    def test_matches_dense_solver(self):
        rng = np.random.default_rng(45)
        for _ in range(10):
            K = gram_matrix(rng.normal(size=(12, 2)), FeatureMapConfig(2)).K
            y = rng.normal(size=12)
            lam = float(rng.uniform(1e-3, 1.0))
            got = qkr_solve(K, y, lam)
            oracle = np.linalg.solve(K + lam * np.eye(12), y)
            np.testing.assert_allclose(got, oracle, atol=1e-10)

    def test_indefinite_system_suggests_larger_lambda(self):
        with pytest.raises(NumericError, match="lambda"):
            qkr_solve(np.diag([1.0, -2.0]), np.ones(2), 0.0)

    def test_negative_lambda_rejected(self):
        with pytest.raises(ConfigError):
            qkr_solve(np.eye(2), np.ones(2), -0.1)


class TestQuantumKernelRidge:
    def _toy(self, n=14, q=2, seed=46):
        rng = np.random.default_rng(seed)
        X = rng.uniform(0, np.pi, size=(n, q))
        y = np.sin(X).sum(axis=1) + 0.05 * rng.normal(size=n)
        return X, y

    def test_matches_independent_dense_route(self):
        X, y = self._toy()
        lam = 1e-2
        model = QuantumKernelRidge(layers=2, lam=lam, center=True).fit(X, y)
        X_test = self._toy(n=5, seed=47)[0]

        # independent route: dense states, loop Gram, explicit projector
        n = len(X)
        V = np.stack([dense_encode(t, 2, 2, 1.0, "ring") for t in X])
        K = np.array([[np.dot(V[i], V[j]) ** 2 for j in range(n)] for i in range(n)])
        H = np.eye(n) - np.ones((n, n)) / n
        K_c = H @ K @ H
        alpha = np.linalg.solve(K_c + lam * np.eye(n), y - y.mean())
        Vt = np.stack([dense_encode(t, 2, 2, 1.0, "ring") for t in X_test])
        k = (Vt @ V.T) ** 2
        k_c = k - K.mean(axis=0)[None, :] - k.mean(axis=1, keepdims=True) + K.mean()
        oracle = k_c @ alpha + y.mean()
        np.testing.assert_allclose(model.predict(X_test), oracle, atol=1e-10)

    def test_huge_penalty_predicts_train_mean(self):
        X, y = self._toy()
        model = QuantumKernelRidge(lam=1e9, center=True).fit(X, y)
        np.testing.assert_allclose(model.predict(X), np.full(len(y), y.mean()), atol=1e-6)

    def test_uncentered_variant(self):
        X, y = self._toy()
        model = QuantumKernelRidge(lam=1e-2, center=False).fit(X, y)
        K = gram_matrix(X, FeatureMapConfig(2)).K
        oracle = K @ np.linalg.solve(K + 1e-2 * np.eye(len(X)), y)
        np.testing.assert_allclose(model.predict(X), oracle, atol=1e-9)

    def test_interpolates_targets_in_kernel_range(self):
        # y = K c lies in the span the model can represent, so a tiny
        # penalty must reproduce it even when K itself is rank deficient
        X, _ = self._toy()
        rng = np.random.default_rng(65)
        K = gram_matrix(X, FeatureMapConfig(2, layers=2)).K
        y = K @ rng.normal(size=len(X))
        model = QuantumKernelRidge(layers=2, lam=1e-8, center=False).fit(X, y)
        assert np.max(np.abs(model.predict(X) - y)) < 1e-5

    def test_deterministic(self):
        X, y = self._toy()
        a = QuantumKernelRidge(lam=1e-3).fit(X, y).predict(X)
        b = QuantumKernelRidge(lam=1e-3).fit(X, y).predict(X)
        np.testing.assert_array_equal(a, b)

    def test_predict_before_fit_rejected(self):
        with pytest.raises(FitError):
            QuantumKernelRidge().predict(np.zeros((2, 2)))


class TestKMeans:
    def test_single_center_is_mean(self):
        rng = np.random.default_rng(48)
        X = rng.normal(size=(20, 3))
        centers = kmeans_angles(X, 1, seed=0)
        np.testing.assert_allclose(centers[0], X.mean(axis=0), atol=1e-12)

    def test_centers_equal_points_when_k_is_n(self):
        rng = np.random.default_rng(49)
        X = rng.normal(size=(6, 2))
        centers = kmeans_angles(X, 6, seed=1)
        got = {tuple(np.round(c, 12)) for c in centers}
        want = {tuple(np.round(x, 12)) for x in X}
        assert got == want

    def test_two_blobs_match_exhaustive_assignment(self):
        rng = np.random.default_rng(50)
        blob_a = rng.normal(scale=0.05, size=(4, 2))
        blob_b = rng.normal(loc=5.0, scale=0.05, size=(4, 2))
        X = np.vstack([blob_a, blob_b])
        centers = kmeans_angles(X, 2, seed=7)
        labels = np.argmin(((X[:, None, :] - centers[None]) ** 2).sum(axis=2), axis=1)

        best = None
        for assign in itertools.product(range(2), repeat=8):
            assign = np.asarray(assign)
            if len(np.unique(assign)) < 2:
                continue
            inertia = sum(
                float(((X[assign == k] - X[assign == k].mean(axis=0)) ** 2).sum())
                for k in range(2)
            )
            if best is None or inertia < best[0]:
                best = (inertia, assign)
        groups = lambda ell: frozenset(
            frozenset(np.flatnonzero(ell == k).tolist()) for k in np.unique(ell)
        )
        assert groups(labels) == groups(best[1])

    def test_deterministic_per_seed(self):
        rng = np.random.default_rng(51)
        X = rng.normal(size=(30, 4))
        np.testing.assert_array_equal(kmeans_angles(X, 5, seed=3), kmeans_angles(X, 5, seed=3))

    def test_duplicate_points_still_terminate(self):
        X = np.vstack([np.zeros((9, 2)), [[8.0, 8.0]]])
        centers = kmeans_angles(X, 3, seed=2)
        assert centers.shape == (3, 2)
        assert np.all(np.isfinite(centers))

    def test_invalid_k_rejected(self):
        with pytest.raises(ConfigError):
            kmeans_angles(np.zeros((3, 1)), 0, seed=0)
        with pytest.raises(ConfigError):
            kmeans_angles(np.zeros((3, 1)), 4, seed=0)


class TestWhitening:
    def test_scalar_center(self):
        np.testing.assert_allclose(whitening_root(np.array([[1.0]])), [[1.0]], atol=1e-14)

    def test_inverse_root_on_well_conditioned(self):
        rng = np.random.default_rng(52)
        M = rng.normal(size=(5, 5))
        K = M @ M.T + 0.5 * np.eye(5)
        W = whitening_root(K)
        np.testing.assert_allclose(W @ K @ W, np.eye(5), atol=1e-9)

    def test_floored_directions_are_dropped(self):
        K = np.diag([2.0, 1e-14])
        W = whitening_root(K)
        assert np.all(np.isfinite(W))
        np.testing.assert_allclose(W, np.diag([2.0**-0.5, 0.0]), atol=1e-12)


class TestQuantumKernelFeatures:
    def _toy(self, n=20, q=3, seed=53):
        rng = np.random.default_rng(seed)
        X = rng.uniform(0, np.pi, size=(n, q))
        y = np.cos(X).sum(axis=1) + 0.05 * rng.normal(size=n)
        return X, y

    def test_single_center_self_fidelity(self):
        X, y = self._toy(n=8)
        model = QuantumKernelFeatures(n_centers=1, whiten=False).fit(X, y)
        phi = qkf_features(model.centers_[0], model)
        np.testing.assert_allclose(phi, [1.0], atol=1e-10)

    def test_single_center_whitening_is_identity(self):
        X, y = self._toy(n=8)
        plain = QuantumKernelFeatures(n_centers=1, whiten=False, seed=5).fit(X, y)
        white = QuantumKernelFeatures(n_centers=1, whiten=True, seed=5).fit(X, y)
        theta = X[3]
        np.testing.assert_allclose(
            qkf_features(theta, plain), qkf_features(theta, white), atol=1e-9
        )

    def test_all_centers_whitened_reproduces_uncentered_dual(self):
        X, y = self._toy(n=12)
        X_test = self._toy(n=6, seed=54)[0]
        for lam in (1e-3, 1e-1):
            primal = QuantumKernelFeatures(
                n_centers="all", layers=2, whiten=True, fit_intercept=False, lam=lam
            ).fit(X, y)
            dual = QuantumKernelRidge(layers=2, lam=lam, center=False).fit(X, y)
            np.testing.assert_allclose(
                primal.predict(X_test), dual.predict(X_test), atol=1e-6
            )

    def test_kmeans_centers_path(self):
        X, y = self._toy()
        model = QuantumKernelFeatures(n_centers=4, seed=9).fit(X, y)
        assert model.centers_.shape == (4, 3)
        assert model.predict(X).shape == (20,)
        assert qkf_features(X[0], model).shape == (4,)

    def test_deterministic(self):
        X, y = self._toy()
        a = QuantumKernelFeatures(n_centers=3, seed=2).fit(X, y).predict(X)
        b = QuantumKernelFeatures(n_centers=3, seed=2).fit(X, y).predict(X)
        np.testing.assert_array_equal(a, b)

    def test_bad_power_rejected(self):
        X, y = self._toy(n=6)
        with pytest.raises(ConfigError):
            QuantumKernelFeatures(power=1.5).fit(X, y)


class TestVQRMeasurements:
    def test_zero_weights_single_layer_identity(self):
        # with theta=0 and W=0 the state stays |0...0>, so every <Z> = +1
        cfg = FeatureMapConfig(3)
        M = vqr_measurements(np.zeros((2, 3)), np.zeros((2, 3)), cfg)
        np.testing.assert_allclose(M, np.ones((2, 3)), atol=1e-14)

    def test_single_qubit_expectation(self):
        # encoder RY(theta) then RY(W): <Z> = cos(theta + W)
        cfg = FeatureMapConfig(1)
        theta, w = 0.4, 0.9
        M = vqr_measurements(np.array([[theta]]), np.array([[w]]), cfg)
        assert abs(M[0, 0] - np.cos(theta + w)) < 1e-12

    def test_expectations_bounded(self):
        rng = np.random.default_rng(55)
        cfg = FeatureMapConfig(3, layers=2)
        M = vqr_measurements(rng.normal(size=(10, 3)), rng.normal(size=(2, 3)), cfg)
        assert np.all(np.abs(M) <= 1.0 + 1e-12)


class TestParameterShift:
    def test_matches_central_finite_differences(self):
        rng = np.random.default_rng(56)
        for trial in range(6):
            q = int(rng.integers(1, 4))
            layers = int(rng.integers(1, 3))
            var_layers = int(rng.integers(1, 3))
            cfg = FeatureMapConfig(q, layers, float(rng.uniform(0.5, 1.5)))
            X = rng.uniform(-np.pi, np.pi, size=(6, q))
            y = rng.normal(size=6)
            W = rng.normal(size=(var_layers, q))
            w = rng.normal(size=q)
            b = float(rng.normal())

            def loss(W_):
                pred = vqr_measurements(X, W_, cfg) @ w + b
                return float(np.mean((pred - y) ** 2))

            resid = vqr_measurements(X, W, cfg) @ w + b - y
            grad = parameter_shift_gradient(X, resid, W, w, cfg)
            h = 1e-5
            for v in range(var_layers):
                for j in range(q):
                    shift = np.zeros_like(W)
                    shift[v, j] = h
                    fd = (loss(W + shift) - loss(W - shift)) / (2 * h)
                    denom = max(abs(fd), 1e-8)
                    assert abs(grad[v, j] - fd) / denom <= 1e-4, f"trial {trial}"


class TestVariationalRegressor:
    def test_epochs_zero_reproducible(self):
        rng = np.random.default_rng(57)
        X = rng.uniform(0, np.pi, size=(10, 2))
        y = rng.normal(size=10)
        a = VariationalQuantumRegressor(epochs=0, seed=4).fit(X, y)
        b = VariationalQuantumRegressor(epochs=0, seed=4).fit(X, y)
        np.testing.assert_array_equal(a.predict(X), b.predict(X))
        assert len(a.loss_log_) == 1

    def test_constant_target_absorbed_by_bias(self):
        rng = np.random.default_rng(58)
        X = rng.uniform(0, np.pi, size=(12, 2))
        y = np.full(12, 3.7)
        model = VariationalQuantumRegressor(epochs=3, seed=1).fit(X, y)
        assert model.final_loss_ <= 1e-6

    def test_cosine_toy_improves(self):
        rng = np.random.default_rng(59)
        X = rng.uniform(-np.pi, np.pi, size=(16, 1))
        y = np.cos(X[:, 0])
        model = VariationalQuantumRegressor(epochs=200, seed=2).fit(X, y)
        assert model.final_loss_ < model.loss_log_[0]

    def test_final_never_worse_than_initial(self):
        rng = np.random.default_rng(60)
        X = rng.uniform(0, np.pi, size=(8, 2))
        y = rng.normal(size=8)
        model = VariationalQuantumRegressor(epochs=25, lr=2.5, seed=3).fit(X, y)
        assert model.final_loss_ <= model.loss_log_[0] + 1e-15

    def test_loss_log_length(self):
        rng = np.random.default_rng(61)
        X = rng.uniform(0, np.pi, size=(6, 2))
        y = rng.normal(size=6)
        model = VariationalQuantumRegressor(epochs=7, seed=0).fit(X, y)
        assert len(model.loss_log_) == 8

    def test_deterministic_training(self):
        rng = np.random.default_rng(62)
        X = rng.uniform(0, np.pi, size=(8, 2))
        y = rng.normal(size=8)
        a = VariationalQuantumRegressor(epochs=10, seed=5).fit(X, y)
        b = VariationalQuantumRegressor(epochs=10, seed=5).fit(X, y)
        assert a.loss_log_ == b.loss_log_
        np.testing.assert_array_equal(a.W_, b.W_)

    def test_wrong_width_predict_rejected(self):
        rng = np.random.default_rng(63)
        X = rng.uniform(0, np.pi, size=(8, 2))
        model = VariationalQuantumRegressor(epochs=0).fit(X, rng.normal(size=8))
        with pytest.raises(ValueError):
            model.predict(np.zeros((2, 3)))


class TestGramDump:
    def test_dump_has_fingerprint_and_roundtrips(self, tmp_path):
        rng = np.random.default_rng(64)
        cfg = FeatureMapConfig(2, layers=2)
        bundle = gram_matrix(rng.normal(size=(5, 2)), cfg)
        path = tmp_path / "gram.csv"
        dump_gram_csv(bundle, cfg, path)
        lines = path.read_text().splitlines()
        assert lines[0].startswith("# config ")
        back = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
        np.testing.assert_array_equal(back, bundle.K)
