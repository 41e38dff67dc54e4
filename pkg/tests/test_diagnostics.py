import numpy as np
import pytest

from vpboost.diagnostics import (
    cauchy_lower_bound,
    cauchy_reduction,
    descent_inner_product,
    featurizer_bounds,
    regularity_report,
    sufficient_reduction_constant,
)
from vpboost.losses import LossBatch, LossKind, hessian_bound, loss_batch
from vpboost.varpro import ReducedDerivatives, as_matrix, assemble_reduced, solve_optimal_weights


def batch_of(grads, hess, values=None):
    grads = np.asarray(grads, dtype=float)
    values = np.zeros(grads.shape[0]) if values is None else values
    return LossBatch(values, grads, np.asarray(hess, dtype=float))


class TestDescentInnerProduct:
    def test_zero_gradient(self):
        rd = ReducedDerivatives(np.zeros(2), np.eye(2), 0.0, 2, 1)
        assert descent_inner_product(rd, 1.0) == 0.0

    def test_by_hand(self):
        rd = ReducedDerivatives(np.array([3.0, 2.0]), np.diag([2.0, 1.0]), 0.0, 2, 1)
        assert descent_inner_product(rd, 1.0) == pytest.approx(-5.0, rel=1e-15)

    def test_matches_direct_sum(self):
        rng = np.random.default_rng(0)
        kind = LossKind.mce(3)
        Z = rng.normal(size=(40, 4))
        batch = loss_batch(kind, rng.normal(size=(40, 3)), rng.integers(0, 3, 40))
        rd = assemble_reduced(Z, batch)
        w = solve_optimal_weights(rd, 0.01)
        direct = np.mean(np.sum(batch.grads * (Z @ as_matrix(w, 4, 3).T), axis=1))
        assert descent_inner_product(rd, 0.01) == pytest.approx(direct, rel=1e-10)

    def test_negative_on_random_instances(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            n = int(rng.integers(1, 10))
            B = rng.normal(size=(n, n))
            rd = ReducedDerivatives(rng.normal(size=n), B @ B.T, 0.0, n, 1)
            assert descent_inner_product(rd, 10 ** rng.uniform(-4, 1)) < 0


class TestRegularityReport:
    def test_rank_one_alignment(self):
        Z = np.array([[3.0, 4.0]])
        batch = batch_of([[2.0]], [[[0.0]]])
        rep = regularity_report(Z, assemble_reduced(Z, batch), 1.0, batch)
        assert rep.operator_norm == pytest.approx(5.0)
        assert rep.grad_norm == pytest.approx(2.0)
        assert rep.g_norm == pytest.approx(10.0)
        assert rep.kappa_align == pytest.approx(1.0)
        assert rep.curvature_ratio is None
        assert "curvature_ratio" in rep.flags

    def test_zero_reduced_gradient(self):
        Z = np.array([[1.0], [1.0]])
        batch = batch_of([[1.0], [-1.0]], [[[1.0]], [[1.0]]])
        rep = regularity_report(Z, assemble_reduced(Z, batch), 1.0, batch)
        assert rep.kappa_align == 0.0
        assert rep.radius == 0.0
        assert rep.descent_ip == 0.0

    def test_zero_loss_gradient_is_flagged_not_nan(self):
        Z = np.ones((3, 2))
        batch = batch_of(np.zeros((3, 1)), np.zeros((3, 1, 1)))
        rep = regularity_report(Z, assemble_reduced(Z, batch), 1.0, batch, beta=1.0)
        assert rep.kappa_align is None and "kappa_align" in rep.flags
        for value in rep.to_dict().values():
            if isinstance(value, float):
                assert np.isfinite(value)

    @pytest.mark.parametrize("kind", [LossKind.mse(2), LossKind.bce(), LossKind.mce(3)], ids=["mse", "bce", "mce"])
    def test_invariants_on_random_stages(self, kind):
        rng = np.random.default_rng(2)
        for _ in range(200):
            n = int(rng.integers(2, 40))
            Z = np.tanh(rng.normal(size=(n, 3)) * rng.uniform(0.1, 3))
            y = rng.normal(size=(n, 2)) if kind.tag.value == "MSE" else rng.integers(0, kind.n_target if kind.n_target > 1 else 2, n)
            batch = loss_batch(kind, rng.normal(scale=2, size=(n, kind.n_target)), y)
            rd = assemble_reduced(Z, batch)
            lam = 10 ** rng.uniform(-4, 0)
            rep = regularity_report(Z, rd, lam, batch, beta=hessian_bound(kind))
            assert 0.0 <= rep.kappa_align <= 1.0 + 1e-12
            assert rep.descent_ip <= 0.0
            assert rep.learner_norm <= rep.radius + 1e-10
            assert rep.curvature_ratio is None or rep.curvature_ratio >= 0
            if rep.reduction_lower_bound is not None:
                assert rep.r_star >= rep.reduction_lower_bound - 1e-8


class TestCauchy:
    def test_flat_curvature(self):
        assert cauchy_reduction(2.0, 0.0, 6.0) == (3.0, 12.0)

    def test_interior_step(self):
        gamma, r = cauchy_reduction(1.0, 2.0, 10.0)
        assert gamma == 0.5 and r == pytest.approx(0.25)

    def test_zero_gradient(self):
        assert cauchy_reduction(0.0, 1.0, 1.0) == (0.0, 0.0)

    def test_lower_bound_on_random_draws(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            G = rng.exponential()
            curv = rng.exponential() * G ** 2
            radius = rng.exponential()
            _, r = cauchy_reduction(G, curv, radius)
            assert r >= 0.5 * G * min(radius, G / (curv / G ** 2)) * (1 - 1e-12)
            assert r >= cauchy_lower_bound(G, curv / G ** 2 * rng.uniform(1, 3), radius) * (1 - 1e-12)


class TestSufficientReduction:
    def test_null_curvature_uses_first_term(self):
        c2 = sufficient_reduction_constant(0.5, None, 2.0, 1.0, 0.4)
        assert c2 == pytest.approx(0.4 / (4.0 + 0.4) * 0.5)

    def test_minimum_of_terms(self):
        c2 = sufficient_reduction_constant(0.5, 0.1, 2.0, 1.0, 0.4)
        assert c2 == pytest.approx(min(0.4 / 4.4 * 0.5, 0.16 / 16 * 0.1))

    def test_missing_alignment(self):
        assert sufficient_reduction_constant(None, 0.1, 2.0, 1.0, 0.4) is None


class TestFeaturizerBounds:
    def test_min_max(self):
        class R:
            def __init__(self, a):
                self.operator_norm = a

        assert featurizer_bounds([R(2.0), R(0.5), R(1.0)]) == (0.5, 2.0)
        assert featurizer_bounds([]) == (None, None)
