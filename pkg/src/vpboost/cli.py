"""Command-line entry point: ``vpboost {gen-data,train,evaluate,diagnose}``."""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np
from scipy.special import expit, softmax
from scipy.stats import rankdata

from .boost import Ensemble, boost
from .config import RunConfig, load_config
from .datasets import Dataset, gen_synthetic, load_csv, split_standardize, write_csv
from .diagnostics import regularity_report
from .errors import ConfigError, DataError, InputError, NumericalError, VPBoostError
from .featurizer import feature_batch
from .losses import LossTag, empirical_loss, hessian_bound, loss_batch, prepare_targets
from .varpro import assemble_reduced

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4

METRICS_HEADER = [
    "seed", "stage", "accepted", "rho", "lambda_w", "train_loss", "val_loss",
    "actual_reduction", "predicted_reduction", "kappa_align", "curvature_ratio",
    "operator_norm", "radius", "descent_ip", "wall_time_seconds",
]
SUMMARY_FIELDS = [
    "train_loss", "val_loss", "rho", "lambda_w", "kappa_align",
    "curvature_ratio", "operator_norm", "radius", "descent_ip",
]
DIAGNOSTIC_FIELDS = [
    "kappa_align", "curvature_ratio", "operator_norm", "lambda_w", "radius", "r_star",
    "r_cauchy", "descent_ip", "grad_norm", "learner_norm", "c2", "reduction_lower_bound",
]


def fmt(value):
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(row.get(h)) for h in header])


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# data


def load_dataset(rc: RunConfig) -> Dataset:
    v = rc.values
    try:
        if v["data.source"] == "synthetic":
            return gen_synthetic(v["data.task"], int(v["data.n"]), int(v["data.seed"]))
        schema = {
            "task": rc.task,
            "features": v["data.features"],
            "targets": v["data.targets"],
            "label": v["data.label"],
            "n_classes": v["data.n_classes"],
        }
        return load_csv(v["data.path"], schema)
    except InputError as exc:
        raise DataError(str(exc)) from None
    except OSError as exc:
        raise DataError(f"cannot read {v['data.path']}: {exc.strerror}") from None


def prepare_splits(rc: RunConfig, seed: int):
    ds = load_dataset(rc)
    if rc.task == "multiclass" and ds.n_classes != rc.n_target:
        raise DataError(f"dataset has {ds.n_classes} classes, config expects {rc.n_target}")
    return split_standardize(ds, tuple(rc.values["data.split"]), seed)


# ---------------------------------------------------------------------------
# metrics


def auc_binary(scores, labels):
    """Area under the ROC curve via the rank-sum statistic (ties get average rank)."""
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def task_metrics(kind, predictions, targets):
    t = prepare_targets(kind, targets)
    out = {"loss": empirical_loss(kind, predictions, t, prepared=True)}
    if kind.tag is LossTag.MSE:
        resid = predictions - t
        mse = float(np.mean(np.sum(resid ** 2, axis=1)))
        total = float(np.mean(np.sum((t - t.mean(axis=0)) ** 2, axis=1)))
        out["mse"] = mse
        out["r2"] = 1.0 - mse / total if total > 0 else None
    elif kind.tag is LossTag.BCE:
        p = expit(predictions[:, 0])
        out["accuracy"] = float(np.mean((p > 0.5) == (t == 1)))
        out["auc"] = auc_binary(p, t)
    else:
        prob = softmax(predictions, axis=1)
        out["accuracy"] = float(np.mean(np.argmax(predictions, axis=1) == t))
        aucs = [auc_binary(prob[:, c], t == c) for c in range(kind.n_target)]
        aucs = [a for a in aucs if a is not None]
        out["auc_ovr"] = float(np.mean(aucs)) if aucs else None
    return out


def select_stage(records, how):
    if how == "last":
        return records[-1]["stage"]
    best = min(records, key=lambda r: (r["val_loss"], r["stage"]))
    return best["stage"]


# ---------------------------------------------------------------------------
# commands


def run_seed(rc: RunConfig, seed: int, out_dir: str):
    (train, val, test), idx, scaler = prepare_splits(rc, seed)
    spec = rc.spec_for(train.n_in)
    cfg = rc.boost.with_(seed=seed)
    ens, records = boost(train, val, rc.kind, spec, cfg, test=test)
    ens.save(os.path.join(out_dir, f"ensemble_seed{seed}.json"))
    write_rows(os.path.join(out_dir, f"metrics_seed{seed}.csv"), METRICS_HEADER,
               [r.as_row(seed) for r in records])
    stages = [
        {"stage": r.stage, "accepted": r.accepted, "lambda_w": r.lambda_w,
         "train_loss": r.train_loss, "val_loss": r.val_loss, "test_loss": r.test_loss}
        for r in records
    ]
    report = {
        "seed": seed,
        "stages": stages,
        "best_val_stage": select_stage(stages, "best-val"),
        "last_stage": records[-1].stage,
        "scaler": scaler.to_dict(),
        "split_sizes": [len(idx.train), len(idx.val), len(idx.test)],
    }
    with open(os.path.join(out_dir, f"report_seed{seed}.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=1)
    return [r.as_row(seed) for r in records]


def summarize(rows_by_seed):
    by_stage = {}
    for rows in rows_by_seed:
        for row in rows:
            by_stage.setdefault(row["stage"], []).append(row)
    header = ["stage", "n_seeds", "accepted_fraction"]
    for name in SUMMARY_FIELDS:
        header += [f"{name}_mean", f"{name}_std"]
    out = []
    for stage in sorted(by_stage):
        rows = by_stage[stage]
        line = {"stage": stage, "n_seeds": len(rows),
                "accepted_fraction": float(np.mean([r["accepted"] for r in rows]))}
        for name in SUMMARY_FIELDS:
            vals = [r[name] for r in rows if r[name] is not None]
            if vals:
                line[f"{name}_mean"] = float(np.mean(vals))
                line[f"{name}_std"] = float(np.std(vals))
        out.append(line)
    return header, out


def cmd_train(rc: RunConfig, args):
    out_dir = rc.output_dir()
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config_effective.yaml"), "w", encoding="utf-8") as fh:
        fh.write(rc.dump())
    jobs = int(args.jobs or rc.values["jobs"])
    seeds = rc.seeds
    if jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(seeds))) as pool:
            results = list(pool.map(run_seed, [rc] * len(seeds), seeds, [out_dir] * len(seeds)))
    else:
        results = [run_seed(rc, s, out_dir) for s in seeds]
    header, summary = summarize(results)
    write_rows(os.path.join(out_dir, "summary.csv"), header, summary)
    for seed, rows in zip(seeds, results):
        last = rows[-1]
        print(f"seed {seed}: {len(rows) - 1} stages, final train loss {fmt(last['train_loss'])}, "
              f"val loss {fmt(last['val_loss'])}")
    print(f"outputs written to {out_dir}")
    return EXIT_OK


def _load_run(rc: RunConfig, seed: int):
    out_dir = rc.output_dir()
    try:
        ens = Ensemble.load(os.path.join(out_dir, f"ensemble_seed{seed}.json"))
        with open(os.path.join(out_dir, f"report_seed{seed}.json"), encoding="utf-8") as fh:
            report = json.load(fh)
    except OSError as exc:
        raise DataError(f"no saved run for seed {seed} in {out_dir}: {exc.strerror}") from None
    return ens, report


def cmd_evaluate(rc: RunConfig, args):
    seed = rc.seeds[0] if args.seed is None else args.seed
    ens, report = _load_run(rc, seed)
    stage = report["last_stage"] if args.select == "last" else report["best_val_stage"]
    model = ens.truncate(stage)
    (train, val, test), _, _ = prepare_splits(rc, seed)
    data = {"train": train, "val": val, "test": test}[args.split]
    metrics = task_metrics(rc.kind, model.predict(data.X), data.targets)
    print(f"seed: {seed}")
    print(f"stage: {stage} ({args.select})")
    print(f"split: {args.split}")
    for key, value in metrics.items():
        print(f"{key}: {fmt(value) if value is not None else 'n/a'}")
    return EXIT_OK


def cmd_diagnose(rc: RunConfig, args):
    seed = rc.seeds[0] if args.seed is None else args.seed
    ens, _ = _load_run(rc, seed)
    metrics = read_rows(os.path.join(rc.output_dir(), f"metrics_seed{seed}.csv"))
    lam_by_stage = {int(r["stage"]): float(r["lambda_w"]) for r in metrics}
    (train, _, _), _, _ = prepare_splits(rc, seed)
    t = prepare_targets(rc.kind, train.targets)
    beta = hessian_bound(rc.kind)
    F = Ensemble(ens.c0, [], rc.kind).predict(train.X)
    rows = []
    for learner in ens.learners:
        derivs = loss_batch(rc.kind, F, t, prepared=True)
        Z = feature_batch(learner.spec, learner.theta, train.X)
        rd = assemble_reduced(Z, derivs)
        lam = lam_by_stage[learner.stage]
        rep = regularity_report(Z, rd, lam, derivs, beta=beta)
        row = {k: getattr(rep, k) for k in DIAGNOSTIC_FIELDS}
        row["stage"] = learner.stage
        rows.append(row)
        print(f"stage {learner.stage}: kappa_align={fmt(rep.kappa_align)} "
              f"curvature_ratio={fmt(rep.curvature_ratio)} operator_norm={fmt(rep.operator_norm)}")
        F = F + learner.predict(train.X, rc.kind.n_target)
    path = os.path.join(rc.output_dir(), f"diagnostics_seed{seed}.csv")
    write_rows(path, ["stage"] + DIAGNOSTIC_FIELDS, rows)
    print(f"diagnostics written to {path}")
    return EXIT_OK


def cmd_gen_data(rc: RunConfig, args):
    ds = load_dataset(rc)
    path = args.out or os.path.join(rc.output_dir(), f"{rc.values['data.task']}.csv")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    write_csv(path, ds)
    print(f"wrote {len(ds)} rows to {path}")
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "evaluate": cmd_evaluate, "diagnose": cmd_diagnose}


def build_parser():
    parser = argparse.ArgumentParser(prog="vpboost", description="Variable-projection boosting experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML config file with dotted keys")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        if name == "gen-data":
            p.add_argument("--out", help="CSV path (default: <output.dir>/<task>.csv)")
        if name == "train":
            p.add_argument("--jobs", type=int, help="worker processes across seeds")
        if name in ("evaluate", "diagnose"):
            p.add_argument("--seed", type=int, help="seed of the saved run (default: first configured seed)")
        if name == "evaluate":
            p.add_argument("--select", choices=["best-val", "last"], default="best-val")
            p.add_argument("--split", choices=["train", "val", "test"], default="test")
    return parser


def run_command(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        rc = load_config(args.config, args.set)
        return COMMANDS[args.command](rc, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, InputError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except VPBoostError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main():
    sys.exit(run_command())


if __name__ == "__main__":
    main()
