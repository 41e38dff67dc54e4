"""Small fully-connected feature maps and their parameter derivatives.

A :class:`FeaturizerSpec` describes a stack of dense layers
``n_in -> widths[0] -> ... -> widths[-1] -> n_feat``, each applying
``act(K u + b)``, optionally followed by one residual block
``u + act(K u + b)`` at width ``n_feat``. The flat parameter vector stores
each layer's weight matrix column-major followed by its bias, in layer order.

The weak learner is ``W @ z(x)``; the linear head ``W`` is not part of this
module.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError

ACTIVATIONS = ("tanh", "relu", "identity")


def _act(name, a):
    if name == "tanh":
        return np.tanh(a)
    if name == "relu":
        return np.maximum(a, 0.0)
    return a


def _act_grad(name, a, out):
    if name == "tanh":
        return 1.0 - out * out
    if name == "relu":
        return (a > 0.0).astype(a.dtype)
    return np.ones_like(a)


@dataclass(frozen=True)
class FeaturizerSpec:
    n_in: int
    widths: tuple = ()
    n_feat: int = 4
    activation: str = "tanh"
    residual: bool = False
    # z(x) = x with no trainable parameters; useful as a pure linear-model baseline
    passthrough: bool = False
    _shapes: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "n_in", int(self.n_in))
        object.__setattr__(self, "n_feat", int(self.n_feat))
        if self.n_in <= 0 or self.n_feat <= 0 or any(w <= 0 for w in self.widths):
            raise InputError("all layer widths must be positive")
        if self.activation not in ACTIVATIONS:
            raise InputError(f"unknown activation {self.activation!r}; choose from {ACTIVATIONS}")
        if self.passthrough:
            if self.widths or self.residual or self.n_feat != self.n_in:
                raise InputError("passthrough featurizer needs n_feat == n_in and no layers")
            shapes = ()
        else:
            dims = (self.n_in,) + self.widths + (self.n_feat,)
            shapes = tuple((dims[i + 1], dims[i]) for i in range(len(dims) - 1))
            if self.residual:
                shapes = shapes + ((self.n_feat, self.n_feat),)
        object.__setattr__(self, "_shapes", shapes)

    @property
    def layer_shapes(self):
        """(out, in) shape of every weight matrix, residual block last."""
        return self._shapes

    @property
    def n_theta(self):
        return sum(q * p + q for q, p in self._shapes)

    def to_dict(self):
        return {
            "n_in": self.n_in,
            "widths": list(self.widths),
            "n_feat": self.n_feat,
            "activation": self.activation,
            "residual": self.residual,
            "passthrough": self.passthrough,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            n_in=d["n_in"],
            widths=tuple(d.get("widths", ())),
            n_feat=d["n_feat"],
            activation=d.get("activation", "tanh"),
            residual=bool(d.get("residual", False)),
            passthrough=bool(d.get("passthrough", False)),
        )


def unflatten(spec: FeaturizerSpec, theta):
    """Split a flat parameter vector into a list of ``(K, b)`` pairs."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (spec.n_theta,):
        raise InputError(f"theta must have length {spec.n_theta}, got shape {theta.shape}")
    params = []
    off = 0
    for q, p in spec.layer_shapes:
        K = theta[off:off + q * p].reshape((q, p), order="F")
        off += q * p
        b = theta[off:off + q]
        off += q
        params.append((K, b))
    return params


def flatten(spec: FeaturizerSpec, params) -> np.ndarray:
    parts = []
    for (K, b), shape in zip(params, spec.layer_shapes):
        K = np.asarray(K, dtype=np.float64)
        if K.shape != shape or np.shape(b) != (shape[0],):
            raise InputError(f"layer parameters do not match shape {shape}")
        parts.append(K.reshape(-1, order="F"))
        parts.append(np.asarray(b, dtype=np.float64))
    if not parts:
        return np.zeros(0)
    return np.concatenate(parts)


def init_theta(spec: FeaturizerSpec, seed: int) -> np.ndarray:
    """Glorot-uniform weights and zero biases, deterministic in ``seed``."""
    if seed < 0:
        raise InputError("seed must be non-negative")
    rng = np.random.default_rng(seed)
    params = []
    for q, p in spec.layer_shapes:
        limit = np.sqrt(6.0 / (p + q))
        params.append((rng.uniform(-limit, limit, size=(q, p)), np.zeros(q)))
    return flatten(spec, params)


def _check_X(spec, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != spec.n_in:
        raise InputError(f"X must be N x {spec.n_in}, got shape {X.shape}")
    return X


def _forward(spec, params, X):
    """Run the network, keeping (input, pre-activation, output) of every layer."""
    tape = []
    u = X
    n_dense = len(params) - (1 if spec.residual else 0)
    for K, b in params[:n_dense]:
        a = u @ K.T + b
        out = _act(spec.activation, a)
        tape.append((u, a, out))
        u = out
    if spec.residual:
        K, b = params[-1]
        a = u @ K.T + b
        out = _act(spec.activation, a)
        tape.append((u, a, out))
        u = u + out
    return u, tape


def feature_batch(spec: FeaturizerSpec, theta, X) -> np.ndarray:
    """Features ``z(x_i)`` for every row of ``X``, as an N x n_feat matrix."""
    X = _check_X(spec, X)
    if spec.passthrough:
        return X.copy()
    Z, _ = _forward(spec, unflatten(spec, theta), X)
    return Z


def feature_vjp(spec: FeaturizerSpec, theta, X, cotangents) -> np.ndarray:
    """Return ``sum_i (dz(x_i)/dtheta)^T cotangents[i]`` by reverse-mode accumulation."""
    X = _check_X(spec, X)
    C = np.asarray(cotangents, dtype=np.float64)
    if C.shape != (X.shape[0], spec.n_feat):
        raise InputError(f"cotangents must be {(X.shape[0], spec.n_feat)}, got {C.shape}")
    if spec.passthrough:
        return np.zeros(0)
    params = unflatten(spec, theta)
    _, tape = _forward(spec, params, X)
    grads = [None] * len(params)
    cot = C
    layers = list(range(len(params)))
    if spec.residual:
        i = layers.pop()
        u, a, out = tape[i]
        delta = cot * _act_grad(spec.activation, a, out)
        grads[i] = (delta.T @ u, delta.sum(axis=0))
        cot = cot + delta @ params[i][0]
    for i in reversed(layers):
        u, a, out = tape[i]
        delta = cot * _act_grad(spec.activation, a, out)
        grads[i] = (delta.T @ u, delta.sum(axis=0))
        cot = delta @ params[i][0]
    return flatten(spec, grads)


def operator_norm(Z) -> float:
    """Empirical operator norm of ``x -> z(x)^T kron I``: ``sqrt(lambda_max(Z^T Z / N))``."""
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] == 0:
        raise InputError("operator norm of an empty feature batch")
    gram = Z.T @ Z / Z.shape[0]
    top = np.linalg.eigvalsh(gram)[-1]
    return float(np.sqrt(max(top, 0.0)))
