"""Trust-region boosting: stage-wise weak learners with ratio-based accept/reject."""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .diagnostics import RegularityReport, regularity_report
from .errors import DegenerateClassError, InputError, NumericalError, ParseError
from .featurizer import FeaturizerSpec, feature_batch
from .losses import LossKind, LossTag, empirical_loss, hessian_bound, loss_batch, prepare_targets
from .varpro import (
    as_matrix,
    assemble_reduced,
    eval_quadratic,
    model_reduction,
    solve_optimal_weights,
)
from .weak import TrainConfig, train_weak_learner

NULL_STEP_TOL = 1e-14
FORMAT_NAME = "vpboost-ensemble"
FORMAT_VERSION = 1


class NullStep(Exception):
    """Predicted reduction too small to form a ratio; the stage is rejected."""


@dataclass(frozen=True)
class BoostConfig:
    M: int = 10
    rho_accept: float = 0.0
    rho_small: float = 1e-4
    gamma_up: float = 10.0
    lambda_w0: float = 1e-3
    lambda_low: float = 1e-8
    trainer: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    # refit the linear weights to w*(theta) before the ensemble update
    refit_weights: bool = True

    def __post_init__(self):
        if self.M < 0:
            raise InputError("M must be non-negative")
        if not 0.0 <= self.rho_accept < self.rho_small < 1.0:
            raise InputError("need 0 <= rho_accept < rho_small < 1")
        if not self.gamma_up > 1.0:
            raise InputError("gamma_up must exceed 1")
        if not self.lambda_w0 >= self.lambda_low > 0.0:
            raise InputError("need lambda_w0 >= lambda_low > 0")
        if self.seed < 0:
            raise InputError("seed must be non-negative")

    def with_(self, **changes):
        return replace(self, **changes)


@dataclass
class Learner:
    spec: FeaturizerSpec
    theta: np.ndarray
    w: np.ndarray
    stage: int = 0

    def predict(self, X, n_target):
        W = as_matrix(self.w, self.spec.n_feat, n_target)
        return feature_batch(self.spec, self.theta, X) @ W.T


@dataclass
class Ensemble:
    c0: np.ndarray
    learners: list
    kind: LossKind

    def predict(self, X):
        return ensemble_predict(self, X)

    def truncate(self, stage):
        """The ensemble as it stood after ``stage`` boosting stages."""
        kept = [lr for lr in self.learners if lr.stage <= stage]
        return Ensemble(self.c0.copy(), kept, self.kind)

    def to_json(self):
        doc = {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "kind": self.kind.to_dict(),
            "c0": [float(v) for v in self.c0],
            "learners": [
                {
                    "stage": int(lr.stage),
                    "spec": lr.spec.to_dict(),
                    "theta": [float(v) for v in lr.theta],
                    "w": [float(v) for v in lr.w],
                }
                for lr in self.learners
            ],
        }
        # json writes floats with repr, the shortest string that round-trips exactly
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"ensemble document is not valid JSON: {exc.msg}", line=exc.lineno) from None
        if doc.get("format") != FORMAT_NAME:
            raise ParseError("not an ensemble document")
        if doc.get("version") != FORMAT_VERSION:
            raise ParseError(f"unsupported ensemble document version {doc.get('version')!r}")
        try:
            kind = LossKind(doc["kind"]["tag"], doc["kind"]["n_target"])
            learners = [
                Learner(
                    FeaturizerSpec.from_dict(d["spec"]),
                    np.array(d["theta"], dtype=np.float64),
                    np.array(d["w"], dtype=np.float64),
                    int(d.get("stage", 0)),
                )
                for d in doc["learners"]
            ]
            c0 = np.array(doc["c0"], dtype=np.float64)
        except (KeyError, TypeError) as exc:
            raise ParseError(f"malformed ensemble document: {exc}") from None
        return cls(c0, learners, kind)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def optimal_constant(kind: LossKind, targets) -> np.ndarray:
    """Loss-minimizing constant prediction."""
    t = prepare_targets(kind, targets)
    if len(t) == 0:
        raise InputError("optimal constant of an empty target set")
    if kind.tag is LossTag.MSE:
        return t.mean(axis=0)
    if kind.tag is LossTag.BCE:
        ybar = float(t.mean())
        if not 0.0 < ybar < 1.0:
            raise DegenerateClassError(f"mean label {ybar} leaves only one class")
        return np.array([np.log(ybar / (1.0 - ybar))])
    freq = np.bincount(t, minlength=kind.n_target) / len(t)
    if np.any(freq == 0):
        empty = [int(c) for c in np.flatnonzero(freq == 0)]
        raise DegenerateClassError(f"classes {empty} have no samples")
    return np.log(freq)


def ensemble_predict(ens: Ensemble, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise InputError("X must be a 2D array")
    for lr in ens.learners:
        if lr.spec.n_in != X.shape[1]:
            raise InputError(f"learner expects {lr.spec.n_in} inputs, X has {X.shape[1]} columns")
    out = np.tile(np.asarray(ens.c0, dtype=np.float64), (X.shape[0], 1))
    for lr in ens.learners:
        out += lr.predict(X, ens.kind.n_target)
    return out


def reduction_ratio(loss_before: float, loss_after: float, predicted: float) -> float:
    if not predicted > NULL_STEP_TOL:
        raise NullStep(f"predicted reduction {predicted:.3e} is below {NULL_STEP_TOL:.0e}")
    return (loss_before - loss_after) / predicted


@dataclass
class StageRecord:
    stage: int
    lambda_w: float
    rho: float | None
    accepted: bool
    actual_reduction: float | None
    predicted_reduction: float | None
    train_loss: float
    val_loss: float
    kappa_align: float | None = None
    curvature_ratio: float | None = None
    operator_norm: float | None = None
    radius: float | None = None
    descent_ip: float | None = None
    wall_time_seconds: float = 0.0
    test_loss: float | None = None
    escalated: bool = False
    report: RegularityReport | None = field(default=None, repr=False)

    def as_row(self, seed):
        return {
            "seed": seed,
            "stage": self.stage,
            "accepted": int(self.accepted),
            "rho": self.rho,
            "lambda_w": self.lambda_w,
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "actual_reduction": self.actual_reduction,
            "predicted_reduction": self.predicted_reduction,
            "kappa_align": self.kappa_align,
            "curvature_ratio": self.curvature_ratio,
            "operator_norm": self.operator_norm,
            "radius": self.radius,
            "descent_ip": self.descent_ip,
            "wall_time_seconds": self.wall_time_seconds,
        }


def _unpack(data):
    if hasattr(data, "X"):
        return np.asarray(data.X, dtype=np.float64), data.targets
    X, t = data
    return np.asarray(X, dtype=np.float64), t


def boost(train, val, kind: LossKind, spec: FeaturizerSpec, cfg: BoostConfig, *, test=None, on_stage=None):
    """Grow an ensemble for ``cfg.M`` stages.

    ``train``, ``val`` and ``test`` are datasets or ``(X, targets)`` pairs.
    Returns the ensemble and ``M + 1`` stage records; record 0 describes the
    constant model. ``on_stage(record)`` is called after every record.
    """
    X, t_raw = _unpack(train)
    Xv, tv_raw = _unpack(val)
    if X.shape[0] == 0 or Xv.shape[0] == 0:
        raise InputError("training and validation sets must be nonempty")
    t = prepare_targets(kind, t_raw)
    tv = prepare_targets(kind, tv_raw)
    if test is not None:
        Xt, tt_raw = _unpack(test)
        tt = prepare_targets(kind, tt_raw)
        test_ok = Xt.shape[0] > 0
    else:
        test_ok = False

    start = time.perf_counter()
    c0 = optimal_constant(kind, t)
    ens = Ensemble(c0, [], kind)
    F = ensemble_predict(ens, X)
    Fv = ensemble_predict(ens, Xv)
    Ft = ensemble_predict(ens, Xt) if test_ok else None
    beta = hessian_bound(kind)

    def test_loss():
        return empirical_loss(kind, Ft, tt, prepared=True) if test_ok else None

    loss = empirical_loss(kind, F, t, prepared=True)
    lam = float(cfg.lambda_w0)
    records = [StageRecord(
        stage=0, lambda_w=lam, rho=None, accepted=True, actual_reduction=None,
        predicted_reduction=None, train_loss=loss,
        val_loss=empirical_loss(kind, Fv, tv, prepared=True),
        wall_time_seconds=time.perf_counter() - start, test_loss=test_loss(),
    )]
    if on_stage is not None:
        on_stage(records[0])

    for m in range(cfg.M):
        t0 = time.perf_counter()
        try:
            derivs = loss_batch(kind, F, t, prepared=True)
            tcfg = cfg.trainer.with_(lambda_w=lam, seed=cfg.seed + m)
            res = train_weak_learner(X, t, F, kind, spec, tcfg, derivs=derivs)
            Z = feature_batch(spec, res.theta, X)
            rd = assemble_reduced(Z, derivs)
            w_star = solve_optimal_weights(rd, lam)
            if cfg.refit_weights:
                w = w_star
                predicted = model_reduction(rd, lam, w)
            else:
                w = res.w
                predicted = rd.L0 - eval_quadratic(rd, w)
            report = regularity_report(Z, rd, lam, derivs, w_star=w_star, beta=beta)
        except NumericalError as exc:
            raise NumericalError(f"stage {m + 1}: {exc}") from exc

        learner = Learner(spec, res.theta, w, stage=m + 1)
        step = Z @ as_matrix(w, spec.n_feat, kind.n_target).T
        F_trial = F + step
        loss_trial = empirical_loss(kind, F_trial, t, prepared=True)
        actual = loss - loss_trial
        try:
            rho = reduction_ratio(loss, loss_trial, predicted)
        except NullStep:
            rho = None
        accepted = rho is not None and rho > cfg.rho_accept
        if accepted:
            ens.learners.append(learner)
            F = F_trial
            loss = loss_trial
            Fv = Fv + learner.predict(Xv, kind.n_target)
            if test_ok:
                Ft = Ft + learner.predict(Xt, kind.n_target)
        escalated = rho is None or rho < cfg.rho_small
        rec = StageRecord(
            stage=m + 1, lambda_w=lam, rho=rho, accepted=accepted,
            actual_reduction=actual, predicted_reduction=predicted,
            train_loss=loss, val_loss=empirical_loss(kind, Fv, tv, prepared=True),
            kappa_align=report.kappa_align, curvature_ratio=report.curvature_ratio,
            operator_norm=report.operator_norm, radius=report.radius,
            descent_ip=report.descent_ip, wall_time_seconds=time.perf_counter() - t0,
            test_loss=test_loss(), escalated=escalated, report=report,
        )
        records.append(rec)
        if on_stage is not None:
            on_stage(rec)
        if escalated:
            lam *= cfg.gamma_up
    return ens, records
