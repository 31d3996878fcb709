"""Command-line entry point: ``dticu {gen,train,eval,sweep,ablate,rollout}``.

Configuration precedence is flags > config file > defaults. Exit codes:
0 success, 2 usage or configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from dticu import __version__
from dticu.ablation import (
    DEFAULT_SWEEP_HOURS,
    run_ablation,
    test_length_sweep,
    write_report,
    write_sweep_csv,
)
from dticu.checkpoint import load_checkpoint, read_manifest, save_checkpoint
from dticu.data import SEQ_MODALITIES, CohortSchema, load_cohort, save_cohort, split_cohort, truncate
from dticu.errors import DtIcuError
from dticu.model import DtIcuModel, ModelConfig, rollout
from dticu.synth import GenConfig, generate
from dticu.training import TrainConfig, evaluate, predict, train

log = logging.getLogger("dticu")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
MANIFEST_FILE = "run_manifest.json"
BALANCING_FLAGS = {"none": "none", "length": "length_only", "label": "label_only", "both": "both"}
SMOKE_MODEL = {"d_model": 32, "n_heads": 4, "n_modality_layers": 1, "n_temporal_layers": 1}
SMOKE_TRAIN = {"steps": 500, "lr": 3e-4, "eval_every": 50, "length_sample_range": [4, 48]}


class UsageError(DtIcuError):
    """Bad command-line input (unknown stay id, unreadable config file, ...)."""


# -- helpers ---------------------------------------------------------------------------


def _configure_logging() -> None:
    level = os.environ.get("DTICU_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR), format="%(levelname)s %(name)s: %(message)s")
    if level not in levels:
        log.error("DTICU_LOG=%r not in {error, info, debug}; using error", level)


def _read_config(path) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    return data


def _merge(base: dict, overrides: dict) -> dict:
    """Flag values that were given (not None) win over ``base``."""
    return {**base, **{k: v for k, v in overrides.items() if v is not None}}


def _write_json_atomic(path: Path, payload) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n")
    os.replace(tmp, path)


def _jsonable(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, (set, frozenset, tuple)):
        return list(obj)
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc}") from None
    return out


def _finish(args, out: Path, config: dict, inputs: dict, outputs: list, started: float) -> None:
    manifest = {
        "command": args.command,
        "tool_version": __version__,
        "seed": args.seed,
        "config": config,
        "inputs": {k: str(v) for k, v in inputs.items()},
        "outputs": sorted(str(Path(p).relative_to(out)) for p in outputs),
        "started_unix": started,
        "wall_seconds": round(time.time() - started, 3),
    }
    _write_json_atomic(out / MANIFEST_FILE, manifest)


def _load_data(path):
    p = Path(path)
    if not p.exists():
        raise UsageError(f"cohort path {p} does not exist")
    return load_cohort(p)


def _select(stays, split: str, seed: int):
    if split == "all":
        return stays
    tr, va, te = split_cohort(stays, seed)
    return {"train": tr, "val": va, "test": te}[split]


def _load_model(path, stays):
    model = load_checkpoint(path)
    if stays:
        widths = {m: stays[0].seq[m].shape[1] for m in SEQ_MODALITIES}
        if widths != model.config.schema.widths:
            raise UsageError(f"cohort widths {widths} do not match checkpoint schema {model.config.schema.widths}")
    return model


def _metrics_json(report) -> dict:
    d = report.to_dict()
    return {k: (None if isinstance(v, float) and np.isnan(v) else v) for k, v in d.items()}


# -- commands --------------------------------------------------------------------------


def cmd_gen(args):
    out = _out_dir(args)
    file_cfg = _read_config(args.config)
    flags = {
        "n_stays": args.n_stays,
        "positive_rate": args.positive_rate,
        "noise_std": args.noise_std,
        "seed": args.seed,
        "length_range": [args.min_hours, args.max_hours] if args.min_hours or args.max_hours else None,
    }
    if flags["length_range"] is not None:
        lo, hi = file_cfg.get("length_range", GenConfig().length_range)
        flags["length_range"] = [args.min_hours or lo, args.max_hours or hi]
    cfg = GenConfig.from_dict(_merge(file_cfg, flags))
    args.seed = cfg.seed
    stays = generate(cfg, threads=args.threads)
    cohort = save_cohort(out, stays, cfg.schema)
    gen_path = out / "gen_config.json"
    _write_json_atomic(gen_path, cfg.to_dict())
    print(f"wrote {len(stays)} stays ({sum(s.label for s in stays)} positive) to {cohort}")
    return [cohort, out / "schema.json", gen_path], cfg.to_dict(), {}


def cmd_train(args):
    out = _out_dir(args)
    stays = _load_data(args.data)
    schema = CohortSchema.load(Path(args.data) / "schema.json") if Path(args.data).is_dir() else CohortSchema()
    train_file = _read_config(args.config)
    model_file = _read_config(args.model_config)
    if args.profile == "smoke":
        train_file = {**SMOKE_TRAIN, **train_file}
        model_file = {**SMOKE_MODEL, **model_file}
    tcfg = TrainConfig.from_dict(_merge(train_file, {
        "steps": args.steps, "lr": args.lr, "batch_size": args.batch_size,
        "lambda_reg": args.lambda_reg, "eval_every": args.eval_every, "seed": args.seed,
        "balancing": BALANCING_FLAGS.get(args.balancing) if args.balancing else None,
    }))
    tcfg.validate()
    args.seed = tcfg.seed
    try:
        mcfg = ModelConfig(**{**model_file, "schema": schema, "lambda_reg": tcfg.lambda_reg})
    except TypeError as exc:
        raise UsageError(f"invalid model config: {exc}") from None
    tr, va, te = split_cohort(stays, tcfg.seed)
    model = DtIcuModel(mcfg, seed=tcfg.seed)
    report = train(model, tr, tcfg, val=va, threads=args.threads)
    ckpt = save_checkpoint(model, out / "checkpoint",
                           extra={"best_step": report.best_step, "split_seed": tcfg.seed})
    curve = out / "loss.csv"
    report.write_csv(curve)
    test_metrics = evaluate(model, te, threshold=tcfg.threshold, threads=args.threads) if te else None
    summary = out / "train_summary.json"
    _write_json_atomic(summary, {
        "best_step": report.best_step, "best_val_auprc": report.best_auprc,
        "stopped_early": report.stopped_early, "steps_run": len(report.records),
        "n_train": len(tr), "n_val": len(va), "n_test": len(te),
        "test_metrics": _metrics_json(test_metrics) if test_metrics else None,
    })
    print(f"trained {len(report.records)} steps; checkpoint at {ckpt}")
    if test_metrics:
        print(f"test auroc={test_metrics.auroc:.4f} auprc={test_metrics.auprc:.4f} recall={test_metrics.recall:.4f}")
    outputs = [ckpt / "manifest.json", ckpt / "weights.bin", curve, summary]
    return outputs, {"train": tcfg.to_dict(), "model": mcfg.to_dict()}, {"data": args.data}


def cmd_eval(args):
    out = _out_dir(args)
    stays = _select(_load_data(args.data), args.split, args.seed)
    model = _load_model(args.checkpoint, stays)
    report = evaluate(model, stays, threshold=args.threshold, threads=args.threads)
    metrics_path = out / "metrics.json"
    _write_json_atomic(metrics_path, _metrics_json(report))
    pred = predict(model, stays, threads=args.threads)
    risk = 1.0 / (1.0 + np.exp(-pred.logits))
    pred_path = out / "predictions.csv"
    with open(pred_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stay_id", "label", "hours", "risk"])
        for s, r in zip(stays, risk):
            w.writerow([s.stay_id, s.label, s.T, repr(float(r))])
    print(json.dumps(_metrics_json(report), indent=2))
    cfg = {"split": args.split, "threshold": args.threshold}
    return [metrics_path, pred_path], cfg, {"data": args.data, "checkpoint": args.checkpoint}


def _parse_hours(text):
    if text is None:
        return list(DEFAULT_SWEEP_HOURS)
    try:
        hours = [int(h) for h in text.split(",") if h.strip()]
    except ValueError:
        raise UsageError(f"--hours must be comma-separated integers, got {text!r}") from None
    if not hours or min(hours) < 4:
        raise UsageError("--hours needs at least one value, each >= 4")
    return hours


def cmd_sweep(args):
    from dticu.plotting import sweep_plot

    out = _out_dir(args)
    hours = _parse_hours(args.hours)
    stays = _select(_load_data(args.data), args.split, args.seed)
    model = _load_model(args.checkpoint, stays)
    sweep = test_length_sweep(model, stays, hours, threshold=args.threshold, threads=args.threads)
    path = out / "sweep.csv"
    write_sweep_csv(sweep, path)
    fig = sweep_plot(sweep, out / "sweep.svg")
    print(path.read_text(), end="")
    cfg = {"hours": hours, "split": args.split, "threshold": args.threshold}
    return [path, fig], cfg, {"data": args.data, "checkpoint": args.checkpoint}


def cmd_ablate(args):
    from dticu.plotting import render_ablation

    out = _out_dir(args)
    stays = _select(_load_data(args.data), args.split, args.seed)
    model = _load_model(args.checkpoint, stays)
    report = run_ablation(model, stays, threshold=args.threshold, threads=args.threads)
    paths = write_report(report, out)
    paths += render_ablation(report, out)
    summary = out / "ablation.json"
    _write_json_atomic(summary, {
        "baseline": _metrics_json(report.baseline),
        "lomo": {m: {"delta": c.delta, "flags": c.metrics.flags} for m, c in report.lomo.items()},
        "ltmo": {"+".join(p): {"delta": c.delta, "flags": c.metrics.flags} for p, c in report.ltmo.items()},
        "correlations": {f"{x}_{y}": {"rho": c.rho if c.defined else None,
                                      "p_value": c.p_value if c.defined else None, "defined": c.defined}
                         for (x, y), c in report.correlations.items()},
    })
    print((out / "lomo.csv").read_text(), end="")
    cfg = {"split": args.split, "threshold": args.threshold}
    return paths + [summary], cfg, {"data": args.data, "checkpoint": args.checkpoint}


def cmd_rollout(args):
    from dticu.plotting import rollout_plot

    out = _out_dir(args)
    stays = _load_data(args.data)
    match = [s for s in stays if s.stay_id == args.stay_id]
    if not match:
        raise UsageError(f"no stay with id {args.stay_id!r} in {args.data}")
    stay = match[0]
    if args.hours is not None:
        stay = truncate(stay, args.hours)
    model = _load_model(args.checkpoint, [stay])
    anchor = float(1.0 / (1.0 + np.exp(-predict(model, [stay]).logits[0])))
    traj, risks = rollout(model, stay, args.horizon)
    widths = model.config.schema.widths
    cols = [f"{m}_{i}" for m in SEQ_MODALITIES for i in range(widths[m])]
    path = out / "rollout.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "hour", "kind", "risk"] + cols)
        last = np.concatenate([stay.seq[m][-1] for m in SEQ_MODALITIES])
        w.writerow([0, stay.T, "observed", repr(anchor)] + [repr(float(v)) for v in last])
        for k, (row, r) in enumerate(zip(traj, risks), start=1):
            w.writerow([k, stay.T + k, "simulated", repr(float(r))] + [repr(float(v)) for v in row])
    fig = rollout_plot(np.concatenate([[anchor], risks]), out / "rollout.svg")
    print(f"stay {stay.stay_id}: risk now {anchor:.4f}, after {args.horizon} simulated hours {risks[-1]:.4f}")
    cfg = {"stay_id": args.stay_id, "horizon": args.horizon, "hours": args.hours}
    return [path, fig], cfg, {"data": args.data, "checkpoint": args.checkpoint}


def _split_seed(args) -> int:
    """Seed the checkpoint was trained with, so ``--split`` reproduces its split."""
    try:
        return int(read_manifest(args.checkpoint).get("extra", {}).get("split_seed", 0))
    except DtIcuError:
        return 0


# -- parser ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dticu", description="Multimodal ICU digital-twin toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="JSON config file (flags override its fields)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="master seed")
        p.add_argument("--threads", type=int, default=1, help="worker threads")

    g = sub.add_parser("gen", help="generate a synthetic cohort")
    common(g)
    g.add_argument("--n-stays", type=int)
    g.add_argument("--positive-rate", type=float)
    g.add_argument("--noise-std", type=float)
    g.add_argument("--min-hours", type=int)
    g.add_argument("--max-hours", type=int)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a model on a cohort")
    common(t)
    t.add_argument("--data", required=True, help="cohort directory or .jsonl file")
    t.add_argument("--model-config", help="JSON file with model architecture fields")
    t.add_argument("--profile", choices=("default", "smoke"), default="default")
    t.add_argument("--steps", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lambda-reg", type=float)
    t.add_argument("--eval-every", type=int)
    t.add_argument("--balancing", choices=tuple(BALANCING_FLAGS))
    t.set_defaults(func=cmd_train)

    def evaluating(p):
        common(p, config=False)
        p.add_argument("--data", required=True)
        p.add_argument("--checkpoint", required=True, help="checkpoint directory")
        p.add_argument("--split", choices=("all", "train", "val", "test"), default="all",
                       help="subset of the cohort (seeded split, same as training)")
        p.add_argument("--threshold", type=float, default=0.5)

    e = sub.add_parser("eval", help="metrics at the final observed hour")
    evaluating(e)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="metrics versus hours of history")
    evaluating(s)
    s.add_argument("--hours", help="comma-separated hours (default 4,8,12,24,36,48,60,72,84,96)")
    s.set_defaults(func=cmd_sweep)

    a = sub.add_parser("ablate", help="leave-one/two-modality-out attribution")
    evaluating(a)
    a.set_defaults(func=cmd_ablate)

    r = sub.add_parser("rollout", help="simulate a stay forward")
    common(r, config=False)
    r.add_argument("--data", required=True)
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--stay-id", required=True)
    r.add_argument("--horizon", type=int, required=True)
    r.add_argument("--hours", type=int, help="truncate the stay to this many hours first")
    r.set_defaults(func=cmd_rollout)
    return parser


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.seed is None and args.command not in ("gen", "train"):
        args.seed = _split_seed(args)
    started = time.time()
    try:
        outputs, config, inputs = args.func(args)
        _finish(args, Path(args.out), config, inputs, outputs, started)
    except FloatingPointError as exc:  # includes NonFiniteLossError
        print(f"dticu {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DtIcuError, ValueError, OSError) as exc:
        print(f"dticu {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
