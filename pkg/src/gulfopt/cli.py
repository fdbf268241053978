"""Command-line surface.

Subcommands: train (base / base-loop / base-lambda-alpha / label-smooth),
gulf (gulf1 / gulf2), eval, ensemble, gen-data, verify. Every run writes its
artifacts (checkpoints, trajectory CSV, figures, summaries) under --out.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .data import SyntheticSpec, gen_synthetic, write_dataset_csv
from .diagnostics import ensemble_predict, evaluate
from .exceptions import ConfigurationError, GulfOptError
from .experiments import load_datasets, make_loss, parse_config, run_experiment
from .models import load_checkpoint
from .verify import SUITES, run_suites

BASE_METHODS = ("base", "base-loop", "base-lambda-alpha", "label-smooth")
GULF_METHODS = ("gulf1", "gulf2")


def _load_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _prepare_out(path, force: bool) -> Path:
    out = Path(path)
    if out.exists() and any(out.iterdir()) and not force:
        raise ConfigurationError(f"output directory {out} is not empty (pass --force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_experiment(args, allowed_methods) -> int:
    cfg = parse_config(_load_json(args.config))
    if cfg.method not in allowed_methods:
        raise ConfigurationError(
            f"method {cfg.method!r} is not valid here; expected one of {allowed_methods}"
        )
    summary = run_experiment(cfg, out_dir=args.out, force=args.force, seed_override=args.seed)
    for entry in summary["per_seed"]:
        print(
            f"seed {entry['seed']}: final test err {entry['final_test_err']:.4f}, "
            f"best stage {entry['best_stage']} test err {entry['best_test_err']:.4f}"
        )
    for failure in summary["failures"]:
        print(f"seed {failure['seed']}: FAILED ({failure['error']})")
    if "median" in summary:
        print(f"median final test err: {summary['median']['final_test_err']:.4f}")
    return 1 if summary["failures"] else 0


def _cmd_eval(args) -> int:
    doc = _load_json(args.config)
    model = load_checkpoint(doc["checkpoint"])
    train, test = load_datasets(doc["dataset"])
    split = doc.get("split", "test")
    data = test if split == "test" else train
    loss = make_loss(doc.get("loss", "cross_entropy"), model.arch.output_dim if doc.get("loss") != "squared_hinge" else 2)
    mean_loss, err = evaluate(model, data, loss)
    print(f"{split} loss {mean_loss:.6f}, error rate {err:.4f}")
    if args.out:
        out = _prepare_out(args.out, args.force)
        (out / "eval.json").write_text(
            json.dumps({"split": split, "loss": mean_loss, "error": err}, indent=2, sort_keys=True) + "\n"
        )
    return 0


def _cmd_ensemble(args) -> int:
    doc = _load_json(args.config)
    models = [load_checkpoint(p) for p in doc["checkpoints"]]
    train, test = load_datasets(doc["dataset"])
    data = test if doc.get("split", "test") == "test" else train
    probs = ensemble_predict(models, data.X)
    pred = np.argmax(probs, axis=1)
    err = float(np.mean(pred != data.y))
    print(f"ensemble of {len(models)} models: error rate {err:.4f}")
    if args.out:
        out = _prepare_out(args.out, args.force)
        with (out / "probabilities.csv").open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow([f"p{k}" for k in range(probs.shape[1])] + ["label"])
            for row, label in zip(probs, data.y):
                writer.writerow([format(v, ".17g") for v in row] + [int(label)])
        (out / "ensemble.json").write_text(
            json.dumps({"num_models": len(models), "error": err}, indent=2, sort_keys=True) + "\n"
        )
    return 0


def _cmd_gen_data(args) -> int:
    if not args.out:
        raise ConfigurationError("gen-data requires --out")
    doc = _load_json(args.config)
    spec = SyntheticSpec.from_dict(doc["synthetic"] if "synthetic" in doc else doc)
    if args.seed is not None:
        spec = SyntheticSpec.from_dict({**spec.to_dict(), "seed": args.seed})
    train, test = gen_synthetic(spec)
    out = _prepare_out(args.out, args.force)
    write_dataset_csv(train, out / "train.csv")
    write_dataset_csv(test, out / "test.csv")
    print(f"wrote {train.n} train and {test.n} test rows to {out}")
    return 0


def _cmd_verify(args) -> int:
    report = run_suites(args.suites or None)
    for suite in report["suites"]:
        for check in suite["checks"]:
            status = "PASS" if check["passed"] else "FAIL"
            print(
                f"[{status}] {suite['suite']}/{check['name']}: "
                f"deviation {check['max_deviation']:.3e} (threshold {check['threshold']:.0e})"
            )
    print("verification:", "PASS" if report["passed"] else "FAIL")
    if args.out:
        out = _prepare_out(args.out, args.force)
        (out / "verify_report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return 0 if report["passed"] else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gulf-opt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="path to a JSON config")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--force", action="store_true", help="allow writing into a non-empty directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed(s)")

    add_common(sub.add_parser("train", help="regular and baseline training"))
    add_common(sub.add_parser("gulf", help="guided (gulf1/gulf2) training"))
    add_common(sub.add_parser("eval", help="evaluate a checkpoint on a dataset"))
    add_common(sub.add_parser("ensemble", help="softmax-averaged ensemble evaluation"))
    gen = sub.add_parser("gen-data", help="generate a synthetic dataset as CSV")
    add_common(gen)
    ver = sub.add_parser("verify", help="run numerical verification suites")
    ver.add_argument("suites", nargs="*", metavar="suite", help=f"suites to run (default: all of {', '.join(SUITES)})")
    ver.add_argument("--out", default=None)
    ver.add_argument("--force", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            return _cmd_experiment(args, BASE_METHODS)
        if args.command == "gulf":
            return _cmd_experiment(args, GULF_METHODS)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "ensemble":
            return _cmd_ensemble(args)
        if args.command == "gen-data":
            return _cmd_gen_data(args)
        if args.command == "verify":
            return _cmd_verify(args)
        raise ConfigurationError(f"unknown command {args.command!r}")
    except GulfOptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
