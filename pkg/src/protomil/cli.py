"""Command-line entry point.

Subcommands: gen-data (synthetic cohort to disk), cluster (teacher
prototypes from the pooled population), train, eval, gradcheck (full-model
finite-difference verification), and report (aggregate eval JSONs).

Exit codes: 0 success, 2 usage or input error, 3 verification failure.
Every run ends by atomically writing a run manifest listing its outputs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:     # Python 3.10
    import tomli as tomllib

from . import __version__
from . import checkpoint as ckpt
from . import model as mdl
from . import trainer
from .config import TrainConfig
from .metrics import MetricReport
from .priors import kmeans, l2_normalize_rows
from .synthdata import GeneratorConfig, generate_cohort, load_cohort, \
    pooled_instances, save_cohort, split_cohort

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_VERIFY = 3

SPLIT_RATIOS = (0.64, 0.16, 0.20)   # 8:2 train/test, then 20% of train


class InputError(Exception):
    """User-facing input problem; maps to exit code 2."""


def _load_config_file(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise InputError(f"config file not found: {p}")
    text = p.read_text()
    if p.suffix == ".json":
        return json.loads(text)
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        raise InputError(f"{p}: not valid TOML ({err})")


def _write_run_manifest(out_dir, command, args, outputs, started):
    manifest = {
        "command": command,
        "config": getattr(args, "config", None),
        "seed": getattr(args, "seed", None),
        "out": str(out_dir),
        "tool_version": __version__,
        "started": started,
        "finished": time.time(),
        "outputs": sorted(str(o) for o in outputs),
    }
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tmp = out_dir / "run_manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, out_dir / "run_manifest.json")


def _apply_toggles(cfg: TrainConfig, args) -> TrainConfig:
    updates = {}
    for name in ("spe", "maps", "hcma", "text"):
        value = getattr(args, f"toggle_{name}")
        if value is not None:
            updates[f"use_{name}"] = value == "on"
    if args.cox_batch is not None:
        updates["cox_batch"] = args.cox_batch
    if args.seed is not None:
        updates["seed"] = args.seed
    if updates:
        data = cfg.to_dict()
        data.update(updates)
        cfg = TrainConfig.from_dict(data)
    return cfg


def cmd_gen_data(args) -> int:
    started = time.time()
    data = _load_config_file(args.config) if args.config else {}
    if args.seed is not None:
        data["seed"] = args.seed
    if args.scatter:
        data["scatter_coords"] = True
    cfg = GeneratorConfig.from_dict(data)
    cohort = generate_cohort(cfg)
    out = Path(args.out)
    manifest_path = save_cohort(cohort, out, config=cfg)
    _write_run_manifest(out, "gen-data", args, [manifest_path], started)
    print(f"wrote {len(cohort)} bags to {out}")
    return EXIT_OK


def cmd_cluster(args) -> int:
    started = time.time()
    cohort, _ = load_cohort(args.data)
    pool = pooled_instances(cohort)
    if args.k > pool.shape[0]:
        raise InputError(f"k={args.k} exceeds the {pool.shape[0]} pooled "
                         f"instances")
    bank = kmeans(pool, args.k, seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    json_path = ckpt.save_arrays(
        out,
        {"teachers": bank.teachers,
         "assignments": bank.assignments.astype(np.float64)},
        meta={"k": args.k, "seed": args.seed,
              "inertia": float(bank.inertia),
              "n_instances": int(pool.shape[0])})
    _write_run_manifest(out.parent, "cluster", args, [json_path], started)
    print(f"k={args.k} inertia={bank.inertia:.6f} -> {json_path}")
    return EXIT_OK


def _load_teacher_bank(path) -> np.ndarray:
    arrays, _ = ckpt.load_arrays(path)
    if "teachers" not in arrays:
        raise InputError(f"{path}: no 'teachers' array in bank")
    return l2_normalize_rows(arrays["teachers"])


def cmd_train(args) -> int:
    started = time.time()
    data = _load_config_file(args.config) if args.config else {}
    cfg = _apply_toggles(TrainConfig.from_dict(data), args)
    cohort, _ = load_cohort(args.data)
    train_bags, val_bags, _ = split_cohort(cohort, SPLIT_RATIOS, cfg.seed)
    teachers = _load_teacher_bank(args.bank) if args.bank else None

    result = trainer.train(train_bags, val_bags, cfg, teachers=teachers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path = trainer.save_model(out / "checkpoint", result.model,
                                   epoch=result.best_epoch,
                                   best_val=result.best_val)
    hist_path = out / "history.csv"
    trainer.write_history_csv(hist_path, result.history)
    _write_run_manifest(out, "train", args,
                        [ckpt_path, ckpt_path.with_suffix(".blob"),
                         hist_path], started)
    status = "aborted" if result.aborted else "done"
    print(f"{status}: best epoch {result.best_epoch} "
          f"val={result.best_val:.4f} -> {ckpt_path}")
    return EXIT_OK


def _select_split(cohort, which: str, seed: int):
    if which == "all":
        return cohort
    train_bags, val_bags, test_bags = split_cohort(cohort, SPLIT_RATIOS, seed)
    return {"train": train_bags, "val": val_bags, "test": test_bags}[which]


def _write_km_csv(path, curve):
    lines = ["time,survival"] + [f"{t!r},{s!r}" for t, s in curve]
    Path(path).write_text("\n".join(lines) + "\n")


def cmd_eval(args) -> int:
    started = time.time()
    model, meta = trainer.load_model(args.checkpoint)
    cohort, _ = load_cohort(args.data)
    bags = _select_split(cohort, args.split, model.cfg.seed)
    report = trainer.evaluate(model, bags)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json() + "\n")
    outputs = [out]

    if model.cfg.task == "survival":
        high, low = trainer.survival_curves(model, bags)
        for name, curve in (("km_high.csv", high), ("km_low.csv", low)):
            path = out.parent / name
            _write_km_csv(path, curve)
            outputs.append(path)

    if args.dump_attention:
        att_dir = Path(args.dump_attention)
        att_dir.mkdir(parents=True, exist_ok=True)
        wrote_any = False
        for i, bag in enumerate(bags):
            att = mdl.bag_attention(model.params, bag, model.cfg)
            if att is None:
                break
            path = att_dir / f"attention_{i:05d}.csv"
            np.savetxt(path, att, delimiter=",")
            outputs.append(path)
            wrote_any = True
        if not wrote_any:
            print("note: model has no routing stage, no attention written")

    _write_run_manifest(out.parent, "eval", args, outputs, started)
    print(report.to_json())
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = TrainConfig(task=args.task, seed=args.seed)
    report = trainer.full_model_grad_check(seed=args.seed, cfg=cfg,
                                           n_samples=args.samples)
    name, idx = report.worst_index
    print(f"max_rel_err={report.max_rel_err:.3e} worst={name}[{idx}] "
          f"threshold={args.threshold:.1e}")
    return EXIT_OK if report.passed(args.threshold) else EXIT_VERIFY


def cmd_report(args) -> int:
    started = time.time()
    rows = []
    for path in args.reports:
        p = Path(path)
        if not p.exists():
            raise InputError(f"report not found: {p}")
        rows.append(MetricReport.from_json(p.read_text()))
    fields = ["acc", "f1_macro", "auc", "c_index", "logrank_p"]
    lines = ["metric,mean,std,n"]
    for name in fields:
        values = [getattr(r, name) for r in rows
                  if getattr(r, name) is not None]
        if values:
            arr = np.asarray(values, dtype=np.float64)
            lines.append(f"{name},{float(arr.mean())!r},"
                         f"{float(arr.std())!r},{len(values)}")
        else:
            lines.append(f"{name},,,0")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines) + "\n")
    _write_run_manifest(out.parent, "report", args, [out], started)
    print(f"aggregated {len(rows)} reports -> {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="protomil",
        description="Prototype-anchored multimodal MIL on synthetic cohorts")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic cohort")
    p.add_argument("--config", help="generator config (TOML or JSON)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--scatter", action="store_true",
                   help="spatially random coordinates (positional-encoding "
                        "ablation)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("cluster", help="teacher prototypes via K-means")
    p.add_argument("--data", required=True, help="cohort directory")
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="bank path (writes "
                   ".json/.blob)")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("train", help="train on a cohort directory")
    p.add_argument("--data", required=True, help="cohort directory")
    p.add_argument("--config", help="train config (TOML or JSON)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--bank", help="teacher bank from `cluster` (optional; "
                   "otherwise clustered from the train split)")
    p.add_argument("--cox-batch", type=int, default=None,
                   help="survival risk-set batch size (0 = full cohort)")
    for name in ("spe", "maps", "hcma", "text"):
        p.add_argument(f"--toggle-{name}", choices=("on", "off"),
                       default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="cohort directory")
    p.add_argument("--split", choices=("train", "val", "test", "all"),
                   default="test")
    p.add_argument("--out", required=True, help="metric report JSON path")
    p.add_argument("--dump-attention", help="directory for per-bag routing "
                   "CSVs")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="verify analytic gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=1e-5)
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--task", choices=("classification", "survival"),
                   default="classification")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("report", help="aggregate eval JSONs into a CSV")
    p.add_argument("--out", required=True)
    p.add_argument("reports", nargs="+")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InputError, ValueError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
