"""Run configuration: a YAML file of dotted keys, plus ``key=value`` overrides.

Keys may be written flat (``boost.gamma_up: 10``) or nested
(``boost: {gamma_up: 10}``); both flatten to the same dotted form. Unknown
keys are rejected. Override values are parsed as YAML scalars, so
``--set trainer.lr=0.05`` gives a float and ``--set seeds=[0,1,2]`` a list.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import yaml

from .boost import BoostConfig
from .errors import ConfigError, InputError
from .featurizer import FeaturizerSpec
from .losses import LossKind
from .weak import TrainConfig

OUTPUT_ROOT_ENV = "VPBOOST_OUTPUT_ROOT"

DEFAULTS = {
    "data.source": "synthetic",
    "data.task": "osc2d",
    "data.n": 1715,
    "data.seed": 0,
    "data.path": None,
    "data.csv_task": "regression",
    "data.features": None,
    "data.targets": None,
    "data.label": "label",
    "data.n_classes": None,
    "data.split": [0.7, 0.15, 0.15],
    "loss": "auto",
    "featurizer.widths": [4, 4],
    "featurizer.n_feat": 4,
    "featurizer.activation": "tanh",
    "featurizer.residual": False,
    "trainer.variant": "VP",
    "trainer.steps": 100,
    "trainer.lr": 0.01,
    "trainer.lambda_theta": 0.0,
    "boost.M": 10,
    "boost.rho_accept": 0.0,
    "boost.rho_small": 1e-4,
    "boost.gamma_up": 10.0,
    "boost.lambda_w0": 1e-3,
    "boost.lambda_low": 1e-8,
    "boost.refit_weights": True,
    "output.dir": "runs/default",
    "seeds": [0],
    "jobs": 1,
}

SYNTHETIC_TASK = {"osc2d": "regression", "swiss_roll": "binary", "peaks5": "multiclass"}
TASK_LOSS = {"regression": "MSE", "binary": "BCE", "multiclass": "MCE"}


def flatten(d, prefix=""):
    out = {}
    for key, value in d.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict) and name not in DEFAULTS:
            out.update(flatten(value, name + "."))
        else:
            out[name] = value
    return out


def parse_override(text):
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse value for {key}: {exc}") from None
    return key.strip(), value


def load_config(path=None, overrides=()):
    """Merge defaults, the file at ``path`` and the overrides into a :class:`RunConfig`."""
    values = dict(DEFAULTS)
    given = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                doc = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a mapping of keys to values")
        given.update(flatten(doc))
    for item in overrides:
        key, value = parse_override(item)
        given[key] = value
    unknown = sorted(k for k in given if k not in DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    values.update(given)
    return RunConfig.from_flat(values)


@dataclass(frozen=True)
class RunConfig:
    values: dict
    kind: LossKind
    spec: FeaturizerSpec
    boost: BoostConfig
    task: str
    n_target: int

    @classmethod
    def from_flat(cls, values):
        v = dict(values)
        source = v["data.source"]
        if source == "synthetic":
            if v["data.task"] not in SYNTHETIC_TASK:
                raise ConfigError(f"data.task must be one of {sorted(SYNTHETIC_TASK)}, got {v['data.task']!r}")
            task = SYNTHETIC_TASK[v["data.task"]]
            n_classes = {"regression": 0, "binary": 2, "multiclass": 5}[task]
        elif source == "csv":
            if not v["data.path"]:
                raise ConfigError("data.path is required when data.source is csv")
            task = v["data.csv_task"]
            if task not in TASK_LOSS:
                raise ConfigError(f"data.csv_task must be one of {sorted(TASK_LOSS)}")
            n_classes = v["data.n_classes"]
            if task == "multiclass" and n_classes is None:
                raise ConfigError("data.n_classes is required for multiclass CSV data")
            if task == "binary":
                n_classes = 2
        else:
            raise ConfigError(f"data.source must be synthetic or csv, got {source!r}")

        loss = str(v["loss"]).upper()
        expected = TASK_LOSS[task]
        if loss == "AUTO":
            loss = expected
        if loss != expected:
            raise ConfigError(f"loss {loss} conflicts with a {task} task (expected {expected})")

        if task == "regression":
            targets = v["data.targets"]
            n_target = len(targets) if targets else 1
        elif task == "binary":
            n_target = 1
        else:
            n_target = int(n_classes)
        seeds = v["seeds"]
        if isinstance(seeds, int):
            seeds = [seeds]
        v["seeds"] = seeds
        try:
            if not seeds or any(int(s) != s or s < 0 for s in seeds):
                raise ConfigError("seeds must be a nonempty list of non-negative integers")
            if int(v["jobs"]) < 1:
                raise ConfigError("jobs must be at least 1")
            if int(v["data.n"]) < 1:
                raise ConfigError("data.n must be at least 1")
            kind = LossKind(loss, n_target)
            n_in = None if source == "csv" else 2
            spec = None
            if n_in is not None:
                spec = cls.make_spec(v, n_in)
            trainer = TrainConfig(
                variant=v["trainer.variant"],
                steps=int(v["trainer.steps"]),
                lr=float(v["trainer.lr"]),
                lambda_w=float(v["boost.lambda_w0"]),
                lambda_theta=float(v["trainer.lambda_theta"]),
            )
            boost = BoostConfig(
                M=int(v["boost.M"]),
                rho_accept=float(v["boost.rho_accept"]),
                rho_small=float(v["boost.rho_small"]),
                gamma_up=float(v["boost.gamma_up"]),
                lambda_w0=float(v["boost.lambda_w0"]),
                lambda_low=float(v["boost.lambda_low"]),
                trainer=trainer,
                refit_weights=bool(v["boost.refit_weights"]),
            )
            split = [float(f) for f in v["data.split"]]
            if len(split) != 3 or any(f <= 0 for f in split) or abs(sum(split) - 1.0) > 1e-9:
                raise ConfigError("data.split must be three positive fractions summing to 1")
        except (InputError, ValueError, TypeError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid configuration: {exc}") from None
        return cls(values=v, kind=kind, spec=spec, boost=boost, task=task, n_target=n_target)

    @staticmethod
    def make_spec(v, n_in):
        return FeaturizerSpec(
            n_in=n_in,
            widths=tuple(v["featurizer.widths"] or ()),
            n_feat=int(v["featurizer.n_feat"]),
            activation=v["featurizer.activation"],
            residual=bool(v["featurizer.residual"]),
        )

    def spec_for(self, n_in):
        try:
            return self.make_spec(self.values, n_in)
        except InputError as exc:
            raise ConfigError(f"invalid featurizer: {exc}") from None

    @property
    def seeds(self):
        return [int(s) for s in self.values["seeds"]]

    def output_dir(self):
        out = str(self.values["output.dir"])
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not os.path.isabs(out):
            out = os.path.join(root, out)
        return out

    def dump(self):
        """The effective configuration as flat dotted-key YAML."""
        return yaml.safe_dump(dict(sorted(self.values.items())), sort_keys=False, default_flow_style=None)
