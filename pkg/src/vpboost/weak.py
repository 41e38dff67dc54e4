"""Training of a single separable weak learner against the frozen quadratic model."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .errors import InputError
from .featurizer import feature_batch, init_theta
from .losses import LossBatch, LossKind, loss_batch, prepare_targets
from .varpro import (
    assemble_reduced,
    quadratic_grad_theta,
    regularized_quadratic,
    solve_optimal_weights,
)


class Variant(str, Enum):
    VP = "VP"
    GD = "GD"
    VP_START = "VP_START"
    VP_END = "VP_END"
    VP_START_END = "VP_START_END"

    @property
    def projects_at_start(self):
        return self in (Variant.VP_START, Variant.VP_START_END)

    @property
    def projects_at_end(self):
        return self in (Variant.VP_END, Variant.VP_START_END)


@dataclass(frozen=True)
class TrainConfig:
    variant: Variant = Variant.VP
    steps: int = 100
    lr: float = 1e-2
    lambda_w: float = 1e-3
    lambda_theta: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.steps < 0:
            raise InputError("number of inner steps must be non-negative")
        if not self.lr > 0:
            raise InputError("learning rate must be positive")
        if not self.lambda_w > 0:
            raise InputError("lambda_w must be positive")
        if self.lambda_theta < 0:
            raise InputError("lambda_theta must be non-negative")
        if self.seed < 0:
            raise InputError("seed must be non-negative")

    def with_(self, **changes):
        return replace(self, **changes)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n))


def adam_step(state: AdamState, theta, grad, lr):
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != theta.shape or state.m.shape != theta.shape:
        raise InputError("Adam state, parameters and gradient must share a shape")
    b1, b2 = state.betas
    t = state.t + 1
    m = b1 * state.m + (1.0 - b1) * grad
    v = b2 * state.v + (1.0 - b2) * grad * grad
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    new_theta = theta - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return AdamState(m, v, t, state.betas, state.eps), new_theta


@dataclass
class WeakLearnerResult:
    theta: np.ndarray
    w: np.ndarray
    trace: list = field(default_factory=list)


def train_weak_learner(
    X,
    targets,
    ensemble_predictions,
    kind: LossKind,
    spec,
    cfg: TrainConfig,
    *,
    derivs: LossBatch | None = None,
    theta0=None,
    callback=None,
) -> WeakLearnerResult:
    """Fit ``(theta, w)`` to the quadratic model of the loss at ``ensemble_predictions``.

    Loss derivatives are evaluated once, at entry, unless ``derivs`` is given.
    ``callback(k, theta, w, rd)`` is invoked at every inner step with the
    linear weights used for that step's theta update.
    """
    X = np.asarray(X, dtype=np.float64)
    if derivs is None:
        derivs = loss_batch(kind, ensemble_predictions, prepare_targets(kind, targets), prepared=True)
    if len(derivs) != X.shape[0]:
        raise InputError("ensemble predictions and inputs differ in length")
    theta = init_theta(spec, cfg.seed) if theta0 is None else np.array(theta0, dtype=np.float64)
    lam = cfg.lambda_w
    adam = AdamState.zeros(theta.shape[0])
    trace = []

    def objective(rd, w, th):
        return regularized_quadratic(rd, w, lam) + 0.5 * cfg.lambda_theta * float(th @ th)

    if cfg.variant is Variant.VP:
        for k in range(cfg.steps):
            Z = feature_batch(spec, theta, X)
            rd = assemble_reduced(Z, derivs)
            w = solve_optimal_weights(rd, lam)
            trace.append(objective(rd, w, theta))
            if callback is not None:
                callback(k, theta, w, rd)
            grad = quadratic_grad_theta(spec, theta, X, w, derivs, cfg.lambda_theta, Z=Z)
            adam, theta = adam_step(adam, theta, grad, cfg.lr)
        rd = assemble_reduced(feature_batch(spec, theta, X), derivs)
        w = solve_optimal_weights(rd, lam)
        trace.append(objective(rd, w, theta))
        return WeakLearnerResult(theta, w, trace)

    Z = feature_batch(spec, theta, X)
    rd = assemble_reduced(Z, derivs)
    if cfg.variant.projects_at_start:
        w = solve_optimal_weights(rd, lam)
    else:
        w = np.zeros(rd.n_w)
    for k in range(cfg.steps):
        trace.append(objective(rd, w, theta))
        if callback is not None:
            callback(k, theta, w, rd)
        grad = quadratic_grad_theta(spec, theta, X, w, derivs, cfg.lambda_theta, Z=Z)
        residual = rd.g + rd.H @ w
        w = w - cfg.lr * (residual + lam * w)
        adam, theta = adam_step(adam, theta, grad, cfg.lr)
        Z = feature_batch(spec, theta, X)
        rd = assemble_reduced(Z, derivs)
    if cfg.variant.projects_at_end:
        w = solve_optimal_weights(rd, lam)
    trace.append(objective(rd, w, theta))
    return WeakLearnerResult(theta, w, trace)
