"""Command-line entry point: ``gbrbm-ae {synth,train,eval,predict,sweep}``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bundle
from .datasets import (
    FEATURES,
    SynthConfig,
    generate_synthetic,
    load_csv,
    load_features_csv,
    save_csv,
)
from .gradients import TrainingDivergenceError
from .pipeline import (
    RunConfig,
    StageError,
    format_flat_config,
    parse_flat_config,
    score,
    sweep_sizes,
    train,
)

log = logging.getLogger("gbrbm_ae")

EXPECTED_ERRORS = (ValueError, OSError, StageError, TrainingDivergenceError)


def _config_help(cls) -> str:
    return "".join(f"  {line}\n" for line in format_flat_config(cls()).splitlines())


def _read_config(cls, path):
    if path is None:
        return cls()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    try:
        return parse_flat_config(cls, text)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"{path}: {exc}") from exc


def _check_not_input(out, *inputs) -> None:
    for src in inputs:
        if src is not None and Path(out).resolve() == Path(src).resolve():
            raise ValueError(f"output {out} would overwrite input {src}")


def _write_all(outputs: list[tuple[str, str]]) -> None:
    """Write every output or none: earlier files are removed if a later one fails."""
    done = []
    try:
        for path, text in outputs:
            bundle.atomic_write_text(path, text)
            done.append(path)
    except OSError as exc:
        for path in done:
            Path(path).unlink(missing_ok=True)
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _csv_text(header: str, rows) -> str:
    return header + "\n" + "".join(",".join(map(str, r)) + "\n" for r in rows)


# --------------------------------------------------------------------------- #
# verbs
# --------------------------------------------------------------------------- #
def cmd_synth(args) -> int:
    cfg = _read_config(SynthConfig, args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    ds = generate_synthetic(cfg)
    save_csv(ds, args.out)
    print(f"wrote {len(ds)} rows to {args.out}")
    return 0


def _run_config(args) -> RunConfig:
    cfg = _read_config(RunConfig, args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def cmd_train(args) -> int:
    cfg = _run_config(args)
    metrics_path = args.metrics or f"{args.out}.metrics.csv"
    for out in (args.out, metrics_path, args.report):
        if out is not None:
            _check_not_input(out, args.data, args.config)
    data = load_csv(args.data)
    result = train(data, cfg)
    outputs = [
        (args.out, bundle.dumps(result.model)),
        (metrics_path, _csv_text("phase,epoch,error",
                                 ((p, e, repr(err)) for p, e, err in result.metrics))),
    ]
    if args.report:
        outputs.append((args.report, json.dumps(result.report, indent=2, sort_keys=True) + "\n"))
    _write_all(outputs)
    rep = result.report
    print(f"layer_dims {'-'.join(map(str, rep['layer_dims']))}")
    print(f"train_accuracy {rep['train']['accuracy']:.4f}")
    print(f"test_accuracy {rep['test']['accuracy']:.4f}")
    print(f"test_mse_db2 {rep['test']['mse_db2']:.4f}")
    print(f"mean_baseline_test_accuracy {rep['mean_baseline_test_accuracy']:.4f}")
    print(f"wrote model to {args.out} and metrics to {metrics_path}")
    return 0


def cmd_eval(args) -> int:
    model = bundle.load_model(args.model)
    _check_not_input(args.out, args.data, args.model)
    data = load_csv(args.data)
    pred = model.predict(data.features)
    rep = score(model, data)
    resid = pred - data.rss
    _write_all([(args.out, _csv_text(
        "index,truth_dbm,pred_dbm,residual_dbm",
        ((i, repr(float(t)), repr(float(p)), repr(float(r)))
         for i, (t, p, r) in enumerate(zip(data.rss, pred, resid)))))])
    print(f"rows {rep['rows']}")
    print(f"accuracy {rep['accuracy']:.6f} (tolerance {model.config.tolerance_db:g} dB)")
    print(f"mse_db2 {rep['mse_db2']:.6f}")
    print(f"mean_abs_db {rep['mean_abs_db']:.6f}")
    print(f"residual_mean_db {float(np.mean(resid)):.6f}")
    print(f"wrote residuals to {args.out}")
    return 0


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def cmd_predict(args) -> int:
    model = bundle.load_model(args.model)
    if args.csv:
        X = load_features_csv(args.csv)
    else:
        missing = [_flag(f) for f in FEATURES if getattr(args, f) is None]
        if missing:
            raise ValueError(f"missing feature flag(s): {', '.join(missing)} (or pass --csv)")
        X = np.array([[getattr(args, f) for f in FEATURES]])
    for value in model.predict(X):
        print(repr(float(value)))
    return 0


def _parse_blocks(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part.strip():
            out.append(int(part))
    if not out:
        raise ValueError("empty block list")
    return out


def cmd_sweep(args) -> int:
    base = _run_config(args)
    _check_not_input(args.out, args.data, args.config)
    data = load_csv(args.data)
    header = "blocks,layer_dims,train_accuracy,test_accuracy,test_mse_db2,mean_baseline_test_accuracy"
    print(header)
    rows = []
    for k in _parse_blocks(args.blocks):
        rep = train(data, replace(base, hidden_sizes=sweep_sizes(k))).report
        row = (k, "-".join(map(str, rep["layer_dims"])), repr(rep["train"]["accuracy"]),
               repr(rep["test"]["accuracy"]), repr(rep["test"]["mse_db2"]),
               repr(rep["mean_baseline_test_accuracy"]))
        rows.append(row)
        print(",".join(map(str, row)), flush=True)
    _write_all([(args.out, _csv_text(header, rows))])
    return 0


# --------------------------------------------------------------------------- #
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gbrbm-ae",
        description="GBRBM-pretrained deep autoencoder for UAV-ground RSS prediction.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="verb", required=True)
    raw = argparse.RawDescriptionHelpFormatter

    def common(p, out_help):
        p.add_argument("--config", help="flat 'key = value' config file (keys listed below)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", required=True, help=out_help)

    p = sub.add_parser("synth", help="write a synthetic dataset CSV", formatter_class=raw,
                       epilog="config keys (defaults):\n" + _config_help(SynthConfig))
    common(p, "output CSV path")
    p.set_defaults(func=cmd_synth)

    run_keys = "config keys (defaults):\n" + _config_help(RunConfig)
    p = sub.add_parser("train", help="train and save a model bundle", formatter_class=raw,
                       epilog=run_keys)
    common(p, "output model bundle path")
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--metrics", help="per-epoch metrics CSV (default: <out>.metrics.csv)")
    p.add_argument("--report", help="optional JSON report path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a model on a dataset CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default="residuals.csv", help="residuals CSV (default: residuals.csv)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="predict RSS in dBm for feature rows")
    p.add_argument("--model", required=True)
    p.add_argument("--csv", help="CSV with the nine feature columns; one prediction per row")
    for f in FEATURES:
        p.add_argument(_flag(f), dest=f, type=float)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("sweep", help="train one model per block count and summarise",
                       formatter_class=raw, epilog=run_keys)
    common(p, "summary CSV path")
    p.add_argument("--data", required=True)
    p.add_argument("--blocks", default="2-7", help="block counts, e.g. '2-7' or '2,4,6'")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except BrokenPipeError:
        # downstream reader closed early (e.g. piped into head)
        sys.stdout = open(os.devnull, "w")
        return 0
    except EXPECTED_ERRORS as exc:
        print(f"gbrbm-ae: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
