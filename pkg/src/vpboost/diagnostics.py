"""Per-stage convergence diagnostics for the trust-region boosting loop.

Every norm here is the empirical one: for a function ``h`` on the training
set ``|h|_N^2 = mean_i |h(x_i)|^2`` and the featurizer norm is the induced
operator norm ``|A|_N = sqrt(lambda_max(Z^T Z / N))``. Degenerate ratios
(zero denominators) are reported as ``None`` and listed in ``flags``; the
functions here never raise on degenerate input so they can run inside the
training loop.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .featurizer import operator_norm
from .losses import LossBatch
from .varpro import ReducedDerivatives, as_matrix, model_reduction, solve_optimal_weights


@dataclass(frozen=True)
class RegularityReport:
    kappa_align: float | None
    curvature_ratio: float | None
    operator_norm: float
    lambda_w: float
    radius: float
    r_star: float
    r_cauchy: float
    descent_ip: float
    grad_norm: float = 0.0
    g_norm: float = 0.0
    learner_norm: float = 0.0
    curvature: float = 0.0
    hessian_norm: float = 0.0
    gamma_cauchy: float = 0.0
    c2: float | None = None
    reduction_lower_bound: float | None = None
    flags: tuple = field(default_factory=tuple)

    def to_dict(self):
        d = asdict(self)
        d["flags"] = list(self.flags)
        return d


def descent_inner_product(rd: ReducedDerivatives, lambda_w: float, w_star=None) -> float:
    """``<grad L, h*> = -g^T (H + lambda I)^{-1} g`` for the projected learner."""
    if w_star is None:
        w_star = solve_optimal_weights(rd, lambda_w)
    return float(rd.g @ w_star)


def cauchy_reduction(grad_norm: float, curvature: float, radius: float):
    """Step length and model decrease of the Cauchy point ``-gamma * grad L``.

    ``curvature`` is ``<grad L, hess L grad L>``; the step is cut at the
    trust-region boundary or at the minimizer along the gradient, whichever
    comes first.
    """
    if grad_norm <= 0:
        return 0.0, 0.0
    gamma = radius / grad_norm
    if curvature > 0:
        gamma = min(gamma, grad_norm ** 2 / curvature)
    r = gamma * grad_norm ** 2 - 0.5 * gamma ** 2 * curvature
    return float(gamma), float(r)


def cauchy_lower_bound(grad_norm: float, hessian_norm: float, radius: float) -> float:
    """``0.5 |grad L| min(radius, |grad L| / |hess L|)``, the guaranteed Cauchy decrease."""
    if hessian_norm > 0:
        return 0.5 * grad_norm * min(radius, grad_norm / hessian_norm)
    return 0.5 * grad_norm * radius


def sufficient_reduction_constant(kappa_align, curvature_ratio, op_norm, beta, lambda_w):
    """Fraction ``c2`` of the Cauchy decrease certified for the projected learner.

    Minimum of the full-gradient-step and curvature-limited cases, using this
    stage's own alignment, curvature ratio and featurizer norm.
    """
    if kappa_align is None or op_norm <= 0:
        return None
    first = lambda_w / (op_norm ** 2 * beta + lambda_w) * kappa_align
    if curvature_ratio is None:
        return first
    second = lambda_w ** 2 / op_norm ** 4 * curvature_ratio
    return min(first, second)


def regularity_report(
    Z,
    rd: ReducedDerivatives,
    lambda_w: float,
    derivs: LossBatch,
    w_star=None,
    beta: float | None = None,
) -> RegularityReport:
    Z = np.asarray(Z, dtype=np.float64)
    n = Z.shape[0]
    if w_star is None:
        w_star = solve_optimal_weights(rd, lambda_w)
    flags = []

    op = operator_norm(Z)
    grads = derivs.grads
    grad_norm = float(np.sqrt(np.mean(np.sum(grads * grads, axis=1))))
    g_norm = float(np.linalg.norm(rd.g))
    denom = op * grad_norm
    if denom > 0:
        kappa = g_norm / denom
    else:
        kappa = None
        flags.append("kappa_align")

    curvature = float(np.mean(np.einsum("ia,iab,ib->i", grads, derivs.hess, grads)))
    wHw = float(w_star @ rd.H @ w_star)
    if curvature > 0:
        curve_ratio = wHw / curvature
    else:
        curve_ratio = None
        flags.append("curvature_ratio")

    W = as_matrix(w_star, rd.n_feat, rd.n_target)
    learner = Z @ W.T
    learner_norm = float(np.sqrt(np.sum(learner * learner) / n))
    radius = op * float(np.linalg.norm(w_star))
    r_star = model_reduction(rd, lambda_w, w_star)
    gamma_c, r_c = cauchy_reduction(grad_norm, curvature, radius)
    hess_norm = float(np.max(np.linalg.norm(derivs.hess, ord=2, axis=(1, 2)))) if n else 0.0

    c2 = None
    bound = None
    if beta is not None:
        c2 = sufficient_reduction_constant(kappa, curve_ratio, op, beta, lambda_w)
        if c2 is not None:
            bound = 0.5 * c2 * grad_norm ** 2 * kappa / (beta + lambda_w / op ** 2)
        else:
            flags.append("reduction_lower_bound")

    return RegularityReport(
        kappa_align=kappa,
        curvature_ratio=curve_ratio,
        operator_norm=op,
        lambda_w=float(lambda_w),
        radius=radius,
        r_star=r_star,
        r_cauchy=r_c,
        descent_ip=float(rd.g @ w_star),
        grad_norm=grad_norm,
        g_norm=g_norm,
        learner_norm=learner_norm,
        curvature=curvature,
        hessian_norm=hess_norm,
        gamma_cauchy=gamma_c,
        c2=c2,
        reduction_lower_bound=bound,
        flags=tuple(flags),
    )


def featurizer_bounds(reports):
    """A-posteriori ``(alpha_low, alpha_high)``: extremes of the observed featurizer norms."""
    norms = [r.operator_norm for r in reports if r is not None]
    if not norms:
        return None, None
    return min(norms), max(norms)
