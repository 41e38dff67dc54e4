import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vpboost.errors import InputError
from vpboost.losses import (
    LossKind,
    empirical_loss,
    hessian_bound,
    loss_batch,
    loss_eval,
    prepare_targets,
)

KINDS = [LossKind.mse(1), LossKind.mse(3), LossKind.bce(), LossKind.mce(3), LossKind.mce(5)]


def random_targets(kind, rng, n):
    if kind.tag.value == "MSE":
        return rng.normal(size=(n, kind.n_target))
    if kind.tag.value == "BCE":
        return rng.integers(0, 2, size=n)
    return rng.integers(0, kind.n_target, size=n)


def fd_grad_hess(kind, p, t, h=1e-5):
    """Central differences of the value (for grad) and of the analytic grad (for hess)."""
    k = p.shape[0]
    g = np.zeros(k)
    H = np.zeros((k, k))
    for j in range(k):
        e = np.zeros(k)
        e[j] = h
        vp = loss_batch(kind, (p + e)[None], t)
        vm = loss_batch(kind, (p - e)[None], t)
        g[j] = (vp.values[0] - vm.values[0]) / (2 * h)
        H[:, j] = (vp.grads[0] - vm.grads[0]) / (2 * h)
    return g, H


class TestLossKind:
    def test_bce_needs_single_logit(self):
        with pytest.raises(InputError):
            LossKind("BCE", 2)

    def test_mce_needs_two_classes(self):
        with pytest.raises(InputError):
            LossKind("MCE", 1)

    def test_tag_from_string(self):
        assert LossKind("MSE", 2) == LossKind.mse(2)


class TestLossEvalExamples:
    def test_mse_at_target(self):
        ev = loss_eval(LossKind.mse(2), [1.5, -2.0], [1.5, -2.0])
        assert ev.value == 0.0
        np.testing.assert_array_equal(ev.grad, [0.0, 0.0])
        np.testing.assert_array_equal(ev.hess, np.eye(2))

    def test_mse_scalar(self):
        ev = loss_eval(LossKind.mse(), [2.0], [0.0])
        assert ev.value == pytest.approx(2.0)
        np.testing.assert_allclose(ev.grad, [2.0])
        np.testing.assert_allclose(ev.hess, [[1.0]])

    def test_bce_zero_logit_positive_label(self):
        ev = loss_eval(LossKind.bce(), [0.0], 1)
        assert ev.value == pytest.approx(np.log(2.0), abs=1e-15)
        np.testing.assert_allclose(ev.grad, [-0.5])
        np.testing.assert_allclose(ev.hess, [[0.25]])

    def test_mce_uniform_logits(self):
        ev = loss_eval(LossKind.mce(3), [0.0, 0.0, 0.0], 0)
        assert ev.value == pytest.approx(np.log(3.0), abs=1e-15)
        np.testing.assert_allclose(ev.grad, [-2 / 3, 1 / 3, 1 / 3], atol=1e-15)
        p = np.full(3, 1 / 3)
        np.testing.assert_allclose(ev.hess, np.diag(p) - np.outer(p, p), atol=1e-15)

    def test_mce_accepts_one_hot(self):
        a = loss_eval(LossKind.mce(3), [0.3, -1.0, 2.0], [0, 0, 1])
        b = loss_eval(LossKind.mce(3), [0.3, -1.0, 2.0], 2)
        assert a.value == b.value

    def test_dimension_mismatch(self):
        with pytest.raises(InputError):
            loss_eval(LossKind.mse(2), [1.0], [1.0, 2.0])

    def test_mce_label_out_of_range(self):
        with pytest.raises(InputError):
            loss_eval(LossKind.mce(3), [0.0, 0.0, 0.0], 3)

    def test_bce_label_not_binary(self):
        with pytest.raises(InputError):
            prepare_targets(LossKind.bce(), [0, 2])

    def test_large_logits_are_stable(self):
        ev = loss_eval(LossKind.bce(), [800.0], 0)
        assert ev.value == pytest.approx(800.0)
        ev = loss_eval(LossKind.mce(2), [800.0, -800.0], 1)
        assert ev.value == pytest.approx(1600.0)
        assert np.all(np.isfinite(ev.hess))


class TestEmpiricalLoss:
    def test_exact_fit_is_zero(self):
        y = np.arange(6.0).reshape(3, 2)
        assert empirical_loss(LossKind.mse(2), y, y) == 0.0

    def test_two_residuals(self):
        assert empirical_loss(LossKind.mse(), [[2.0], [0.0]], [0.0, 0.0]) == pytest.approx(1.0)

    def test_single_sample_matches_loss_eval(self):
        kind = LossKind.mce(4)
        p = np.array([[0.1, -0.4, 2.0, 0.3]])
        assert empirical_loss(kind, p, [2]) == loss_eval(kind, p[0], 2).value

    def test_empty_sample(self):
        with pytest.raises(InputError):
            empirical_loss(LossKind.mse(), np.zeros((0, 1)), np.zeros(0))

    def test_row_mismatch(self):
        with pytest.raises(InputError):
            empirical_loss(LossKind.mse(), np.zeros((3, 1)), np.zeros(2))


class TestHessianBound:
    def test_values(self):
        assert hessian_bound(LossKind.mse(3)) == 1.0
        assert hessian_bound(LossKind.bce()) == 0.25
        assert hessian_bound(LossKind.mce(4)) == 0.5

    def test_mce_bound_is_attained_on_simplex(self):
        # brute-force grid over the 3-simplex: max eigenvalue of diag(p) - pp^T
        best = 0.0
        grid = np.linspace(0.0, 1.0, 201)
        for a in grid:
            for b in grid[grid <= 1.0 - a + 1e-12]:
                p = np.array([a, b, max(1.0 - a - b, 0.0)])
                best = max(best, np.linalg.eigvalsh(np.diag(p) - np.outer(p, p))[-1])
        assert best == pytest.approx(0.5, abs=1e-12)


@pytest.mark.parametrize("kind", KINDS, ids=lambda k: f"{k.tag.value}{k.n_target}")
class TestDerivativeProperties:
    def test_finite_differences(self, kind):
        rng = np.random.default_rng(7)
        p = rng.normal(scale=2.0, size=(200, kind.n_target))
        t = random_targets(kind, rng, 200)
        batch = loss_batch(kind, p, t)
        for i in range(200):
            g_fd, H_fd = fd_grad_hess(kind, p[i], t[i:i + 1])
            np.testing.assert_allclose(batch.grads[i], g_fd, rtol=1e-6, atol=1e-9)
            np.testing.assert_allclose(batch.hess[i], H_fd, rtol=1e-5, atol=1e-9)

    def test_psd_and_bounded(self, kind):
        rng = np.random.default_rng(11)
        p = rng.normal(scale=4.0, size=(1000, kind.n_target))
        batch = loss_batch(kind, p, random_targets(kind, rng, 1000))
        eig = np.linalg.eigvalsh(batch.hess)
        assert eig.min() >= -1e-10
        assert eig.max() <= hessian_bound(kind) + 1e-12
        np.testing.assert_array_equal(batch.hess, np.swapaxes(batch.hess, 1, 2))

    def test_values_bounded_below(self, kind):
        rng = np.random.default_rng(3)
        p = rng.normal(scale=5.0, size=(500, kind.n_target))
        assert loss_batch(kind, p, random_targets(kind, rng, 500)).values.min() >= 0.0


class TestMceRankDeficiency:
    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-20, 20), min_size=2, max_size=6), st.data())
    def test_ones_in_null_space(self, logits, data):
        k = len(logits)
        label = data.draw(st.integers(0, k - 1))
        ev = loss_eval(LossKind.mce(k), logits, label)
        np.testing.assert_allclose(ev.hess @ np.ones(k), 0.0, atol=1e-15)
