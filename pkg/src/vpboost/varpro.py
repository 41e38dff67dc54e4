"""Reduced quadratic model of the loss around the current ensemble.

For a weak learner ``h(x) = W z(x)`` the second-order model of the loss is a
quadratic in ``w = vec(W)`` (column-major, so entry ``(a, b)`` of ``W`` sits
at index ``b * n_target + a``):

    Q(w) = L0 + g.w + 0.5 w.H.w

with ``g = mean_i kron(z_i, grad_i)`` and ``H = mean_i kron(z_i z_i^T, hess_i)``.
Adding ``0.5 * lambda_w * |w|^2`` gives a strictly convex problem whose
minimizer is available in closed form.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import InputError, NumericalError
from .featurizer import feature_batch, feature_vjp
from .losses import LossBatch

JITTER_RETRIES = 3


@dataclass(frozen=True)
class ReducedDerivatives:
    g: np.ndarray
    H: np.ndarray
    L0: float
    n_feat: int
    n_target: int

    @property
    def n_w(self):
        return self.g.shape[0]


def as_matrix(w, n_feat, n_target) -> np.ndarray:
    """``vec^{-1}``: the n_target x n_feat matrix whose column-major vec is ``w``."""
    w = np.asarray(w, dtype=np.float64)
    return w.reshape(n_feat, n_target).T


def vec(W) -> np.ndarray:
    return np.asarray(W, dtype=np.float64).T.reshape(-1)


def assemble_reduced(Z, derivs: LossBatch) -> ReducedDerivatives:
    Z = np.asarray(Z, dtype=np.float64)
    n = Z.shape[0]
    if len(derivs) != n:
        raise InputError(f"{n} feature rows but {len(derivs)} loss evaluations")
    if n == 0:
        raise InputError("cannot assemble reduced derivatives from an empty batch")
    n_feat = Z.shape[1]
    n_target = derivs.grads.shape[1]
    g = (Z.T @ derivs.grads / n).reshape(-1)
    if n_target == 1:
        H = (Z * derivs.hess[:, 0, :]).T @ Z / n
    else:
        outer = Z[:, :, None] * Z[:, None, :]
        T = np.tensordot(outer, derivs.hess, axes=([0], [0]))  # (b, d, a, c)
        H = T.transpose(0, 2, 1, 3).reshape(n_feat * n_target, n_feat * n_target) / n
    H = 0.5 * (H + H.T)
    return ReducedDerivatives(g=g, H=H, L0=derivs.mean, n_feat=n_feat, n_target=n_target)


def solve_optimal_weights(rd: ReducedDerivatives, lambda_w: float) -> np.ndarray:
    """Minimizer ``-(H + lambda_w I)^{-1} g`` of the regularized quadratic model."""
    if not lambda_w > 0:
        raise InputError(f"lambda_w must be positive, got {lambda_w}")
    eye = np.eye(rd.n_w)
    shift = float(lambda_w)
    for _ in range(JITTER_RETRIES + 1):
        try:
            factor = linalg.cho_factor(rd.H + shift * eye, lower=True, check_finite=True)
        except (linalg.LinAlgError, ValueError):
            shift *= 10.0
            continue
        w = -linalg.cho_solve(factor, rd.g)
        if np.all(np.isfinite(w)):
            return w
        shift *= 10.0
    raise NumericalError(f"Cholesky factorization of H + lambda I failed (lambda_w={lambda_w})")


def eval_quadratic(rd: ReducedDerivatives, w) -> float:
    w = np.asarray(w, dtype=np.float64)
    if w.shape != rd.g.shape:
        raise InputError(f"w must have length {rd.n_w}")
    Hs = 0.5 * (rd.H + rd.H.T)
    return float(rd.L0 + rd.g @ w + 0.5 * w @ Hs @ w)


def regularized_quadratic(rd: ReducedDerivatives, w, lambda_w: float) -> float:
    w = np.asarray(w, dtype=np.float64)
    return eval_quadratic(rd, w) + 0.5 * lambda_w * float(w @ w)


def model_reduction(rd: ReducedDerivatives, lambda_w: float, w_star) -> float:
    """``Q(0) - Q(w*)`` written as ``w*.(H/2 + lambda I).w*``; valid only at the optimum."""
    w = np.asarray(w_star, dtype=np.float64)
    return float(0.5 * w @ rd.H @ w + lambda_w * (w @ w))


def feature_cotangents(Z, W, derivs: LossBatch) -> np.ndarray:
    """Per-sample ``dQ/dz_i = W^T (grad_i + hess_i W z_i) / N``."""
    Z = np.asarray(Z, dtype=np.float64)
    P = Z @ W.T
    r = derivs.grads + np.einsum("iac,ic->ia", derivs.hess, P)
    return r @ W / Z.shape[0]


def quadratic_grad_theta(spec, theta, X, w, derivs: LossBatch, lambda_theta: float = 0.0, Z=None):
    """Gradient in theta of ``Q(w, theta) + lambda_theta * 0.5 |theta|^2`` with ``w`` held fixed."""
    theta = np.asarray(theta, dtype=np.float64)
    if Z is None:
        Z = feature_batch(spec, theta, X)
    if len(derivs) != Z.shape[0]:
        raise InputError("loss evaluations do not match the number of samples")
    w = np.asarray(w, dtype=np.float64)
    n_target = derivs.grads.shape[1]
    if w.shape != (spec.n_feat * n_target,):
        raise InputError(f"w must have length {spec.n_feat * n_target}")
    W = as_matrix(w, spec.n_feat, n_target)
    grad = feature_vjp(spec, theta, X, feature_cotangents(Z, W, derivs))
    if lambda_theta:
        grad = grad + lambda_theta * theta
    return grad


def reduced_objective(spec, theta, X, derivs: LossBatch, lambda_w: float) -> float:
    """``Q(w*(theta), theta) + 0.5 lambda_w |w*(theta)|^2``: the projected problem in theta alone."""
    rd = assemble_reduced(feature_batch(spec, theta, X), derivs)
    return regularized_quadratic(rd, solve_optimal_weights(rd, lambda_w), lambda_w)
