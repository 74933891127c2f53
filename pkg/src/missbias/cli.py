"""Command-line entry point.

Exit codes: 0 success, 2 config error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .core import Parametrization
from .errors import ConfigError, MissBiasError
from .fit import fit_calibrator, fit_ensemble
from .metrics import PredictablePipeline, accuracy_vs_rate, reference_frequency
from .serialize import format_float, load_calibrator, load_model, make_metadata, save_calibrator, save_model

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _config(args) -> harness.ExperimentConfig:
    if args.config is None:
        return harness.ExperimentConfig.from_dict({}, args.seed)
    return harness.ExperimentConfig.load(args.config, args.seed)


def _out(args, cfg) -> Path:
    return Path(args.out if args.out is not None else cfg.output_dir)


def _model(args, cfg, data):
    if getattr(args, "model", None):
        return load_model(args.model)
    return harness.train_base(cfg, data)


def _sizes(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--sizes expects comma-separated integers, got {text!r}") from None


def cmd_gen_data(args, cfg):
    data = harness.load_dataset(cfg)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    names = data.feature_names or [f"x{j}" for j in range(data.n)]
    w.writerow([*names, "label", "split"])
    split_of = np.empty(len(data.labels), dtype=object)
    for name, idx in data.splits.items():
        split_of[idx] = name
    for row, label, split in zip(data.features, data.labels, split_of):
        w.writerow([*(format_float(v) for v in row), int(label), split])
    return {"data.csv": buf.getvalue()}


def cmd_train_model(args, cfg):
    data = harness.load_dataset(cfg)
    model = harness.train_base(cfg, data)
    out = _out(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    save_model(out / "model.json", model)
    return {}


def cmd_fit_calibrator(args, cfg):
    data = harness.load_dataset(cfg)
    model = _model(args, cfg, data)
    policy = harness.make_policy(cfg, data)
    kind = Parametrization(args.parametrization)
    fcfg = harness._fit_cfg(cfg, kind)
    meta = make_metadata(cfg.seed, cfg.config_hash())
    out = _out(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    if args.rate is not None:
        grid = [args.rate]
        buckets, _ = harness.calibration_pairs(cfg, model, data, policy, grid)
        params, _ = fit_calibrator(buckets[0][1], fcfg)
        save_calibrator(out / "calibrator.json", params, meta, rate=args.rate)
    else:
        grid = harness.rate_grid(cfg, policy.n_units(data.n))
        buckets, _ = harness.calibration_pairs(cfg, model, data, policy, grid)
        save_calibrator(out / "calibrator.json", fit_ensemble(buckets, fcfg), meta)
    return {}


def _pipeline(args, cfg, data):
    model = _model(args, cfg, data)
    calibrator = load_calibrator(args.calibrator) if args.calibrator else None
    return PredictablePipeline(model, calibrator, harness.make_policy(cfg, data))


def cmd_evaluate(args, cfg):
    data = harness.load_dataset(cfg)
    pipe = _pipeline(args, cfg, data)
    X, y = data.split("test")
    grid = harness.rate_grid(cfg, pipe.n_units(data.n))
    rep = accuracy_vs_rate(pipe, X, y, grid, cfg.ablation.eval_ablations_per_input, cfg.seed,
                           reference=reference_frequency(pipe.model, X))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rate", "bias_nats", "accuracy"])
    for p in rep.per_rate:
        w.writerow([format_float(p.rate), format_float(p.bias), format_float(p.accuracy)])
    return {"evaluation.csv": buf.getvalue()}


def cmd_explain(args, cfg):
    data = harness.load_dataset(cfg)
    pipe = _pipeline(args, cfg, data)
    X, _ = data.split("test")
    if args.points is not None:
        cfg = dataclasses.replace(cfg, explainer=dataclasses.replace(cfg.explainer, num_explain=args.points))
    if cfg.explainer.method == "none":
        raise ConfigError("explain needs explainer.method set to 'lime' or 'kernelshap'")
    units = pipe.n_units(data.n)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["point_id", *(f"a{j}" for j in range(units))])
    for j, i in enumerate(harness.explain_indices(cfg, len(X))):
        alpha = harness._explain(cfg, pipe, X[i], j)
        w.writerow([int(i), *(format_float(v) for v in alpha)])
    return {"attributions.csv": buf.getvalue()}


def cmd_bench(args, cfg):
    return harness.benchmark_files(harness.run_benchmark(cfg))


def cmd_simplex_demo(args, cfg):
    calibrator = load_calibrator(args.calibrator) if args.calibrator else None
    res = harness.run_simplex_demo(cfg, args.rate if args.rate is not None else 0.75, calibrator)
    return {"points.csv": res.to_csv(), "accuracy.json": res.accuracy_json()}


def cmd_sweep(args, cfg):
    rows = harness.run_training_sweep(cfg, _sizes(args.sizes), args.rate if args.rate is not None else 0.5)
    timing = {"seconds": {str(r.size): r.seconds for r in rows}}
    return {"sweep.csv": harness.sweep_csv(rows), "timing.json": json.dumps(timing, indent=2, sort_keys=True) + "\n"}


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-model": cmd_train_model,
    "fit-calibrator": cmd_fit_calibrator,
    "evaluate": cmd_evaluate,
    "explain": cmd_explain,
    "bench": cmd_bench,
    "simplex-demo": cmd_simplex_demo,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="missbias", description="Missingness-bias calibration experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", metavar="PATH")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", metavar="DIR")
        p.add_argument("--format", choices=["csv"], default="csv")
        if name in ("fit-calibrator", "evaluate", "explain"):
            p.add_argument("--model", metavar="PATH", help="saved model JSON (trained from config if omitted)")
        if name in ("evaluate", "explain", "simplex-demo"):
            p.add_argument("--calibrator", metavar="PATH")
        if name in ("fit-calibrator", "simplex-demo", "sweep"):
            p.add_argument("--rate", type=float)
        if name == "fit-calibrator":
            p.add_argument("--parametrization", choices=[k.value for k in Parametrization], default="dense")
        if name == "explain":
            p.add_argument("--points", type=int)
        if name == "sweep":
            p.add_argument("--sizes", required=True, help="comma-separated pair counts, ascending")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        files = COMMANDS[args.command](args, cfg)
        if files:
            harness.write_outputs(_out(args, cfg), files)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissBiasError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
