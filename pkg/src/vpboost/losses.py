"""Per-datum losses with exact first and second derivatives in the prediction.

All three losses act on raw model outputs (logits for the classification
losses):

* ``MSE``  ``0.5 * ||yhat - y||^2``
* ``BCE``  ``log(1 + exp(yhat)) - y * yhat`` with a scalar logit
* ``MCE``  ``logsumexp(yhat) - yhat[y]`` with a logit vector

The batched :func:`loss_batch` is what the optimizer uses; :func:`loss_eval`
is the single-sample form and is implemented on top of it.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import expit, log_softmax, softmax

from .errors import InputError


class LossTag(str, Enum):
    MSE = "MSE"
    BCE = "BCE"
    MCE = "MCE"


_HESSIAN_BOUND = {LossTag.MSE: 1.0, LossTag.BCE: 0.25, LossTag.MCE: 0.5}


@dataclass(frozen=True)
class LossKind:
    tag: LossTag
    n_target: int = 1

    def __post_init__(self):
        object.__setattr__(self, "tag", LossTag(self.tag))
        n = int(self.n_target)
        object.__setattr__(self, "n_target", n)
        if n < 1:
            raise InputError(f"n_target must be positive, got {n}")
        if self.tag is LossTag.BCE and n != 1:
            raise InputError("BCE takes a single logit (n_target = 1)")
        if self.tag is LossTag.MCE and n < 2:
            raise InputError("MCE needs at least two classes")

    @classmethod
    def mse(cls, n_target=1):
        return cls(LossTag.MSE, n_target)

    @classmethod
    def bce(cls):
        return cls(LossTag.BCE, 1)

    @classmethod
    def mce(cls, n_classes):
        return cls(LossTag.MCE, n_classes)

    def to_dict(self):
        return {"tag": self.tag.value, "n_target": self.n_target}


@dataclass(frozen=True)
class LossEval:
    value: float
    grad: np.ndarray
    hess: np.ndarray


@dataclass(frozen=True)
class LossBatch:
    """Stacked per-datum evaluations: ``values`` (N,), ``grads`` (N, t), ``hess`` (N, t, t)."""

    values: np.ndarray
    grads: np.ndarray
    hess: np.ndarray

    def __len__(self):
        return self.values.shape[0]

    def __getitem__(self, i):
        return LossEval(float(self.values[i]), self.grads[i], self.hess[i])

    @property
    def mean(self):
        return float(np.mean(self.values))


def hessian_bound(kind: LossKind) -> float:
    """Uniform bound on the spectral norm of the per-datum Hessian."""
    return _HESSIAN_BOUND[kind.tag]


def prepare_targets(kind: LossKind, targets) -> np.ndarray:
    """Validate targets and return them in canonical array form.

    MSE targets become an (N, n_target) float array; BCE labels an (N,) float
    array of zeros and ones; MCE labels an (N,) integer array of class indices.
    One-hot rows are accepted for MCE.
    """
    t = np.asarray(targets)
    if kind.tag is LossTag.MSE:
        t = np.asarray(t, dtype=np.float64)
        if t.ndim <= 1 and kind.n_target == 1:
            t = t.reshape(-1, 1)
        if t.ndim != 2 or t.shape[1] != kind.n_target:
            raise InputError(f"MSE targets must have {kind.n_target} columns, got shape {t.shape}")
        return t
    if kind.tag is LossTag.BCE:
        t = np.asarray(t, dtype=np.float64).reshape(-1)
        if not np.all((t == 0.0) | (t == 1.0)):
            raise InputError("BCE labels must be 0 or 1")
        return t
    if t.ndim == 2:
        if t.shape[1] != kind.n_target:
            raise InputError(f"one-hot targets must have {kind.n_target} columns")
        t = np.argmax(t, axis=1)
    t = t.reshape(-1)
    if t.size and not np.all(np.equal(np.mod(t, 1), 0)):
        raise InputError("MCE labels must be integer class indices")
    t = t.astype(np.int64)
    if t.size and (t.min() < 0 or t.max() >= kind.n_target):
        raise InputError(f"MCE label out of range [0, {kind.n_target})")
    return t


def _check_predictions(kind, predictions):
    p = np.asarray(predictions, dtype=np.float64)
    if p.ndim == 1 and kind.n_target == 1:
        p = p.reshape(-1, 1)
    if p.ndim != 2 or p.shape[1] != kind.n_target:
        raise InputError(f"predictions must be N x {kind.n_target}, got shape {p.shape}")
    return p


def _values(kind, p, t):
    if kind.tag is LossTag.MSE:
        return 0.5 * np.sum((p - t) ** 2, axis=1)
    if kind.tag is LossTag.BCE:
        z = p[:, 0]
        return np.logaddexp(0.0, z) - t * z
    logp = log_softmax(p, axis=1)
    return -logp[np.arange(p.shape[0]), t]


def loss_batch(kind: LossKind, predictions, targets, *, prepared=False) -> LossBatch:
    """Values, gradients and Hessians of the loss for every row of ``predictions``."""
    p = _check_predictions(kind, predictions)
    t = targets if prepared else prepare_targets(kind, targets)
    if len(t) != p.shape[0]:
        raise InputError(f"{p.shape[0]} predictions but {len(t)} targets")
    n, k = p.shape
    values = _values(kind, p, t)
    if kind.tag is LossTag.MSE:
        grads = p - t
        hess = np.broadcast_to(np.eye(k), (n, k, k)).copy()
    elif kind.tag is LossTag.BCE:
        s = expit(p[:, 0])
        grads = (s - t)[:, None]
        hess = (s * (1.0 - s))[:, None, None]
    else:
        prob = softmax(p, axis=1)
        grads = prob.copy()
        grads[np.arange(n), t] -= 1.0
        hess = prob[:, :, None] * np.eye(k)[None] - prob[:, :, None] * prob[:, None, :]
    return LossBatch(values, grads, hess)


def loss_eval(kind: LossKind, yhat, y) -> LossEval:
    yhat = np.asarray(yhat, dtype=np.float64).reshape(-1)
    if yhat.shape[0] != kind.n_target:
        raise InputError(f"expected {kind.n_target} outputs, got {yhat.shape[0]}")
    if kind.tag is LossTag.MSE:
        target = np.asarray(y, dtype=np.float64).reshape(1, -1)
    elif kind.tag is LossTag.MCE and np.ndim(y) == 1:
        target = np.asarray(y).reshape(1, -1)
    else:
        target = np.asarray(y).reshape(1)
    return loss_batch(kind, yhat[None, :], target)[0]


def empirical_loss(kind: LossKind, predictions, targets, *, prepared=False) -> float:
    """Sample average of the per-datum loss."""
    p = _check_predictions(kind, predictions)
    if p.shape[0] == 0:
        raise InputError("empirical loss of an empty sample")
    t = targets if prepared else prepare_targets(kind, targets)
    if len(t) != p.shape[0]:
        raise InputError(f"{p.shape[0]} predictions but {len(t)} targets")
    return float(np.mean(_values(kind, p, t)))
