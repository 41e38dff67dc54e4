"""Synthetic 2D benchmark tasks, CSV ingestion, and train/val/test splitting."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import GenerationError, InputError, ParseError

TASKS = ("regression", "binary", "multiclass")
SYNTHETIC = ("osc2d", "swiss_roll", "peaks5")
PEAKS_GRID = 2001
PEAKS_CLASSES = 5


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    targets: np.ndarray
    task: str
    n_classes: int = 0

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim != 2:
            raise InputError("X must be a 2D array")
        t = np.asarray(self.targets)
        if self.task not in TASKS:
            raise InputError(f"unknown task {self.task!r}")
        if self.task == "regression":
            t = np.asarray(t, dtype=np.float64)
            if t.ndim == 1:
                t = t.reshape(-1, 1)
        else:
            t = t.reshape(-1).astype(np.int64)
            n_classes = 2 if self.task == "binary" else int(self.n_classes)
            object.__setattr__(self, "n_classes", n_classes)
            if t.size and (t.min() < 0 or t.max() >= n_classes):
                raise InputError(f"class index out of range [0, {n_classes})")
        if t.shape[0] != X.shape[0]:
            raise InputError(f"{X.shape[0]} rows of X but {t.shape[0]} targets")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "targets", t)

    def __len__(self):
        return self.X.shape[0]

    @property
    def n_in(self):
        return self.X.shape[1]

    @property
    def n_target(self):
        if self.task == "regression":
            return self.targets.shape[1]
        if self.task == "binary":
            return 1
        return self.n_classes

    def subset(self, idx):
        return Dataset(self.X[idx], self.targets[idx], self.task, self.n_classes)

    def with_X(self, X):
        return Dataset(X, self.targets, self.task, self.n_classes)


# ---------------------------------------------------------------------------
# synthetic tasks


def oscillatory(x1, x2):
    return x1 * (1.0 - x1) * np.cos(4 * np.pi * x1) * np.sin(4 * np.pi * x2 ** 2) ** 2


def peaks(x1, x2):
    return (
        3 * (1 - x1) ** 2 * np.exp(-(x1 ** 2) - (x2 + 1) ** 2)
        - 10 * (x1 / 5 - x1 ** 3 - x2 ** 5) * np.exp(-(x1 ** 2) - x2 ** 2)
        - np.exp(-(x1 + 1) ** 2 - x2 ** 2) / 3
    )


@lru_cache(maxsize=1)
def peaks_level_edges():
    """Boundaries of five equal-width bands covering the range of ``peaks`` on [-3, 3]^2."""
    g = np.linspace(-3.0, 3.0, PEAKS_GRID)
    f = peaks(g[:, None], g[None, :])
    return np.linspace(f.min(), f.max(), PEAKS_CLASSES + 1)


def swiss_roll_paths(omega):
    """Points on the two spiral arms at angle ``omega`` (radius ``omega / 4pi``)."""
    r = omega / (4 * np.pi)
    unit = np.stack([np.cos(omega), np.sin(omega)], axis=-1)
    return r[..., None] * unit, (r + 0.2)[..., None] * unit


def _osc2d(n, rng):
    X = rng.uniform(0.0, 1.0, size=(n, 2))
    return Dataset(X, oscillatory(X[:, 0], X[:, 1]), "regression")


def _swiss_roll(n, rng):
    omega = rng.uniform(0.0, 4 * np.pi, size=(2, n))
    arm0, _ = swiss_roll_paths(omega[0])
    _, arm1 = swiss_roll_paths(omega[1])
    X = np.concatenate([arm0, arm1])
    y = np.repeat([0, 1], n)
    order = rng.permutation(2 * n)
    return Dataset(X[order], y[order], "binary")


def _peaks5(n, rng, max_rounds=200):
    edges = peaks_level_edges()
    per_class = [[] for _ in range(PEAKS_CLASSES)]
    counts = np.zeros(PEAKS_CLASSES, dtype=int)
    batch = max(1000, 20 * n)
    for _ in range(max_rounds):
        X = rng.uniform(-3.0, 3.0, size=(batch, 2))
        labels = np.digitize(peaks(X[:, 0], X[:, 1]), edges[1:-1])
        for c in range(PEAKS_CLASSES):
            need = n - counts[c]
            if need > 0:
                picked = X[labels == c][:need]
                per_class[c].append(picked)
                counts[c] += picked.shape[0]
        if np.all(counts >= n):
            break
    else:
        raise GenerationError(f"could not draw {n} points for every peaks level set")
    X = np.concatenate([np.concatenate(p) for p in per_class])
    y = np.repeat(np.arange(PEAKS_CLASSES), n)
    order = rng.permutation(X.shape[0])
    return Dataset(X[order], y[order], "multiclass", PEAKS_CLASSES)


def gen_synthetic(task: str, n: int, seed: int) -> Dataset:
    """Generate a benchmark dataset.

    ``n`` is the total sample count for ``osc2d`` and the per-class count
    for the two classification tasks.
    """
    if n < 1:
        raise InputError("n must be at least 1")
    rng = np.random.default_rng(seed)
    if task == "osc2d":
        return _osc2d(n, rng)
    if task == "swiss_roll":
        return _swiss_roll(n, rng)
    if task == "peaks5":
        return _peaks5(n, rng)
    raise InputError(f"unknown synthetic task {task!r}; choose from {SYNTHETIC}")


# ---------------------------------------------------------------------------
# CSV


def _fmt(x):
    return format(float(x), ".17g")


def write_csv(path, ds: Dataset):
    """Write ``f0..f{d-1}`` feature columns followed by ``y0..`` or ``label``."""
    header = [f"f{j}" for j in range(ds.n_in)]
    if ds.task == "regression":
        header += [f"y{j}" for j in range(ds.targets.shape[1])]
    else:
        header.append("label")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(len(ds)):
            row = [_fmt(v) for v in ds.X[i]]
            if ds.task == "regression":
                row += [_fmt(v) for v in ds.targets[i]]
            else:
                row.append(str(int(ds.targets[i])))
            writer.writerow(row)


def load_csv(path, schema=None) -> Dataset:
    """Read a headered CSV file.

    ``schema`` keys: ``task`` (default ``regression``), ``features`` (column
    names, default every ``f<j>`` column), ``targets`` (regression columns,
    default every ``y<j>`` column), ``label`` (classification column, default
    ``label``) and ``n_classes`` (default: inferred from the labels).
    """
    schema = dict(schema or {})
    task = schema.get("task", "regression")
    if task not in TASKS:
        raise InputError(f"unknown task {task!r}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("missing header row", line=1) from None
        features = schema.get("features") or [h for h in header if h.startswith("f") and h[1:].isdigit()]
        if task == "regression":
            target_cols = schema.get("targets") or [h for h in header if h.startswith("y") and h[1:].isdigit()]
        else:
            target_cols = [schema.get("label", "label")]
        if not features:
            raise ParseError("no feature columns found", line=1)
        if not target_cols:
            raise ParseError("no target columns found", line=1)
        for col in list(features) + list(target_cols):
            if col not in header:
                raise ParseError(f"missing column {col!r}", line=1)
        f_idx = [header.index(c) for c in features]
        t_idx = [header.index(c) for c in target_cols]
        rows_x, rows_t = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, found {len(row)}", line=line_no)
            try:
                rows_x.append([float(row[j]) for j in f_idx])
                rows_t.append([float(row[j]) for j in t_idx])
            except ValueError as exc:
                raise ParseError(f"non-numeric value ({exc})", line=line_no) from None
    X = np.array(rows_x, dtype=np.float64).reshape(-1, len(f_idx))
    T = np.array(rows_t, dtype=np.float64).reshape(-1, len(t_idx))
    if task == "regression":
        return Dataset(X, T, task)
    labels = T[:, 0]
    if not np.all(np.equal(np.mod(labels, 1), 0)):
        raise InputError("class labels must be integers")
    labels = labels.astype(np.int64)
    if task == "binary":
        return Dataset(X, labels, task)
    n_classes = schema.get("n_classes")
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if labels.size else 0
    return Dataset(X, labels, task, int(n_classes))


# ---------------------------------------------------------------------------
# splitting and scaling


@dataclass(frozen=True)
class SplitIndices:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int


@dataclass
class Scaler:
    mean: np.ndarray
    scale: np.ndarray
    centered_only: list = field(default_factory=list)

    def transform(self, X):
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.scale

    def to_dict(self):
        return {
            "mean": [float(v) for v in self.mean],
            "scale": [float(v) for v in self.scale],
            "centered_only": list(self.centered_only),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["mean"], dtype=np.float64), np.array(d["scale"], dtype=np.float64),
                   list(d.get("centered_only", [])))


def split_sizes(n, fractions):
    """Floor the train and validation counts; the remainder goes to test."""
    n_train = math.floor(fractions[0] * n + 1e-9)
    n_val = math.floor(fractions[1] * n + 1e-9)
    return n_train, n_val, n - n_train - n_val


def split_standardize(ds: Dataset, fractions=(0.7, 0.15, 0.15), seed=0):
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise InputError("split fractions must be three positive numbers summing to 1")
    n = len(ds)
    n_train, n_val, _ = split_sizes(n, fractions)
    perm = np.random.default_rng(seed).permutation(n)
    idx = SplitIndices(perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:], seed)
    train_X = ds.X[idx.train]
    mean = train_X.mean(axis=0)
    std = train_X.std(axis=0)
    constant = [j for j in range(ds.n_in) if not std[j] > 0]
    scale = np.where(std > 0, std, 1.0)
    scaler = Scaler(mean, scale, constant)
    parts = tuple(ds.subset(i).with_X(scaler.transform(ds.X[i])) for i in (idx.train, idx.val, idx.test))
    return parts, idx, scaler
