import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vpboost.errors import InputError
from vpboost.featurizer import (
    FeaturizerSpec,
    feature_batch,
    feature_vjp,
    flatten,
    init_theta,
    operator_norm,
    unflatten,
)
from vpboost.varpro import as_matrix


def fd_vjp(spec, theta, X, C, h=1e-6):
    out = np.zeros_like(theta)
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = h
        out[j] = (np.sum(C * feature_batch(spec, theta + e, X))
                  - np.sum(C * feature_batch(spec, theta - e, X))) / (2 * h)
    return out


class TestSpec:
    def test_task_one_parameter_count(self):
        assert FeaturizerSpec(2, (4, 4), 4).n_theta == 52

    def test_one_hidden_layer_count(self):
        assert FeaturizerSpec(2, (4,), 4).n_theta == 32

    def test_residual_adds_square_block(self):
        assert FeaturizerSpec(2, (4,), 4, residual=True).n_theta == 32 + 20

    def test_rejects_bad_widths(self):
        with pytest.raises(InputError):
            FeaturizerSpec(2, (0,), 4)
        with pytest.raises(InputError):
            FeaturizerSpec(2, (4,), 4, activation="sigmoid")

    def test_dict_round_trip(self):
        spec = FeaturizerSpec(3, (5, 2), 4, activation="relu", residual=True)
        assert FeaturizerSpec.from_dict(spec.to_dict()) == spec


class TestInitTheta:
    spec = FeaturizerSpec(2, (4, 4), 4)

    def test_deterministic(self):
        np.testing.assert_array_equal(init_theta(self.spec, 3), init_theta(self.spec, 3))

    def test_seed_changes_values(self):
        assert np.any(init_theta(self.spec, 3) != init_theta(self.spec, 4))

    def test_length_and_zero_biases(self):
        theta = init_theta(self.spec, 0)
        assert theta.shape == (52,)
        for K, b in unflatten(self.spec, theta):
            np.testing.assert_array_equal(b, 0.0)
            assert np.abs(K).max() <= np.sqrt(6.0 / sum(K.shape))

    def test_negative_seed(self):
        with pytest.raises(InputError):
            init_theta(self.spec, -1)


class TestLayout:
    def test_column_major_weights_then_bias(self):
        spec = FeaturizerSpec(2, (), 3, activation="identity")
        theta = np.arange(9.0)
        (K, b), = unflatten(spec, theta)
        np.testing.assert_array_equal(K, [[0, 3], [1, 4], [2, 5]])
        np.testing.assert_array_equal(b, [6, 7, 8])

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.integers(1, 5), max_size=3), st.integers(1, 4), st.booleans(), st.integers(0, 2**31))
    def test_round_trip(self, widths, n_feat, residual, seed):
        spec = FeaturizerSpec(3, tuple(widths), n_feat, residual=residual)
        theta = np.random.default_rng(seed).normal(size=spec.n_theta)
        np.testing.assert_array_equal(flatten(spec, unflatten(spec, theta)), theta)

    def test_wrong_length(self):
        with pytest.raises(InputError):
            unflatten(FeaturizerSpec(2, (), 2), np.zeros(5))


class TestFeatureBatch:
    def test_zero_weights_give_zero_features(self):
        spec = FeaturizerSpec(2, (), 3)
        Z = feature_batch(spec, np.zeros(spec.n_theta), np.random.default_rng(0).normal(size=(5, 2)))
        np.testing.assert_array_equal(Z, 0.0)

    def test_identity_weights(self):
        spec = FeaturizerSpec(2, (), 2)
        theta = flatten(spec, [(np.eye(2), np.zeros(2))])
        Z = feature_batch(spec, theta, np.array([[0.5, -0.5]]))
        np.testing.assert_allclose(Z, [[np.tanh(0.5), np.tanh(-0.5)]], rtol=1e-15)
        assert Z[0, 0] == pytest.approx(0.4621, abs=1e-4)

    def test_matches_scalar_loop(self):
        spec = FeaturizerSpec(3, (4,), 2)
        theta = init_theta(spec, 5)
        X = np.random.default_rng(1).normal(size=(4, 3))
        (K1, b1), (K2, b2) = unflatten(spec, theta)
        for i in range(4):
            hidden = [np.tanh(sum(K1[r, c] * X[i, c] for c in range(3)) + b1[r]) for r in range(4)]
            z = [np.tanh(sum(K2[r, c] * hidden[c] for c in range(4)) + b2[r]) for r in range(2)]
            np.testing.assert_allclose(feature_batch(spec, theta, X[i:i + 1])[0], z, rtol=1e-13)

    def test_residual_with_zero_block_is_identity(self):
        spec = FeaturizerSpec(2, (3,), 3, residual=True)
        plain = FeaturizerSpec(2, (3,), 3)
        theta_plain = init_theta(plain, 2)
        theta = np.concatenate([theta_plain, np.zeros(12)])
        X = np.random.default_rng(0).normal(size=(6, 2))
        np.testing.assert_array_equal(feature_batch(spec, theta, X), feature_batch(plain, theta_plain, X))

    def test_passthrough(self):
        spec = FeaturizerSpec(3, (), 3, passthrough=True)
        X = np.arange(6.0).reshape(2, 3)
        np.testing.assert_array_equal(feature_batch(spec, np.zeros(0), X), X)

    def test_column_mismatch(self):
        spec = FeaturizerSpec(2, (), 2)
        with pytest.raises(InputError):
            feature_batch(spec, init_theta(spec, 0), np.zeros((3, 3)))


class TestFeatureVjp:
    def test_zero_cotangent(self):
        spec = FeaturizerSpec(2, (3,), 2)
        X = np.ones((4, 2))
        np.testing.assert_array_equal(feature_vjp(spec, init_theta(spec, 0), X, np.zeros((4, 2))), 0.0)

    def test_linear_layer_by_hand(self):
        spec = FeaturizerSpec(2, (), 1, activation="identity")
        grad = feature_vjp(spec, np.array([0.7, -0.2, 0.1]), np.array([[1.0, 2.0]]), np.array([[3.0]]))
        np.testing.assert_allclose(grad, [3.0, 6.0, 3.0])

    def test_shape_mismatch(self):
        spec = FeaturizerSpec(2, (), 2)
        with pytest.raises(InputError):
            feature_vjp(spec, init_theta(spec, 0), np.zeros((3, 2)), np.zeros((3, 3)))

    @pytest.mark.parametrize("activation", ["tanh", "relu", "identity"])
    @pytest.mark.parametrize("residual", [False, True])
    def test_finite_differences(self, activation, residual):
        rng = np.random.default_rng(10 * len(activation) + int(residual))
        for _ in range(5):
            widths = tuple(rng.integers(1, 6, size=rng.integers(0, 3)))
            spec = FeaturizerSpec(int(rng.integers(1, 5)), widths, int(rng.integers(1, 5)),
                                  activation=activation, residual=residual)
            theta = rng.normal(size=spec.n_theta)
            X = rng.normal(size=(int(rng.integers(1, 20)), spec.n_in))
            C = rng.normal(size=(X.shape[0], spec.n_feat))
            np.testing.assert_allclose(feature_vjp(spec, theta, X, C), fd_vjp(spec, theta, X, C),
                                       rtol=1e-5, atol=1e-7)


class TestOperatorNorm:
    def test_single_row(self):
        assert operator_norm(np.array([[3.0, 4.0]])) == pytest.approx(5.0, rel=1e-15)

    def test_orthonormal_rows(self):
        assert operator_norm(np.eye(2)) == pytest.approx(np.sqrt(0.5), rel=1e-15)

    def test_zero(self):
        assert operator_norm(np.zeros((4, 3))) == 0.0

    def test_empty(self):
        with pytest.raises(InputError):
            operator_norm(np.zeros((0, 3)))

    def test_equals_scaled_singular_value(self):
        Z = np.random.default_rng(0).normal(size=(30, 4))
        assert operator_norm(Z) == pytest.approx(np.linalg.svd(Z / np.sqrt(30), compute_uv=False)[0], rel=1e-12)

    def test_submultiplicative(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            n, f, t = rng.integers(1, 40), rng.integers(1, 6), rng.integers(1, 4)
            Z = rng.normal(size=(n, f))
            w = rng.normal(size=f * t)
            H = Z @ as_matrix(w, f, t).T
            lhs = np.sqrt(np.sum(H * H) / n)
            assert lhs <= operator_norm(Z) * np.linalg.norm(w) + 1e-10

    def test_tight_over_random_directions(self):
        rng = np.random.default_rng(2)
        Z = rng.normal(size=(200, 3)) @ np.diag([1.0, 0.9, 0.8])
        best = 0.0
        for _ in range(200):
            w = rng.normal(size=3)
            w /= np.linalg.norm(w)
            best = max(best, np.sqrt(np.mean((Z @ w) ** 2)))
        assert best >= 0.99 * operator_norm(Z)
