"""Experiment configuration and orchestration.

A config names a method, a dataset (CSV paths or a synthetic spec), an
architecture, a loss, SGD settings, and the method-specific fields. One run
per seed; every run writes stage checkpoints, a trajectory CSV, rendered
figures, and contributes to a summary with per-seed values and their median.
"""

from __future__ import annotations

import json
import statistics
from dataclasses import dataclass, replace
from pathlib import Path

from .data import Dataset, SyntheticSpec, gen_synthetic, load_csv_dataset, standardize_features
from .diagnostics import record_trajectory, write_trajectory_csv
from .exceptions import ConfigurationError, GulfOptError
from .figures import render_run_figures
from .losses import LossFn, cross_entropy, squared, squared_hinge
from .models import MlpArchitecture, load_checkpoint, save_checkpoint
from .trainers import (
    GENERATOR_HALF_SQUARED_NORM,
    GENERATOR_LOSS,
    GulfConfig,
    INIT_RANDOM,
    SgdConfig,
    base_loop,
    gulf_train,
    init_random,
    resolve_initial_model,
    train_base_lambda_alpha,
    train_label_smoothing,
    train_regular,
)
from .numerics import RngStream

METHODS = ("base", "base-loop", "base-lambda-alpha", "label-smooth", "gulf1", "gulf2")
LOSS_KINDS = ("cross_entropy", "squared", "squared_hinge")


@dataclass(frozen=True)
class ExperimentConfig:
    method: str
    dataset: dict
    architecture: MlpArchitecture
    loss: str
    sgd: SgdConfig
    output_dir: str
    seeds: tuple[int, ...]
    gulf: GulfConfig | None = None
    stages: int | None = None
    epsilon: float | None = None
    alpha: float | None = None
    base_checkpoint: str | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.loss not in LOSS_KINDS:
            raise ConfigurationError(f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")
        if not self.seeds:
            raise ConfigurationError("at least one seed is required")
        if self.method in ("gulf1", "gulf2") and self.gulf is None:
            raise ConfigurationError(f"method {self.method} requires a gulf section")
        if self.method == "base-loop" and (self.stages is None or self.stages < 1):
            raise ConfigurationError("base-loop requires stages >= 1")
        if self.method == "label-smooth" and self.epsilon is None:
            raise ConfigurationError("label-smooth requires an epsilon")
        if self.method == "base-lambda-alpha" and self.alpha is None:
            raise ConfigurationError("base-lambda-alpha requires an alpha")


def make_loss(kind: str, num_classes: int) -> LossFn:
    if kind == "cross_entropy":
        return cross_entropy(num_classes)
    if kind == "squared":
        return squared(num_classes)
    return squared_hinge()


def parse_config(doc: dict) -> ExperimentConfig:
    try:
        method = str(doc["method"])
        arch = MlpArchitecture.from_dict(doc["architecture"])
        sgd_doc = dict(doc["sgd"])
        sgd = SgdConfig(
            lr=float(sgd_doc["lr"]),
            momentum=float(sgd_doc.get("momentum", 0.9)),
            weight_decay=float(sgd_doc.get("weight_decay", 0.0)),
            batch_size=int(sgd_doc.get("batch_size", 128)),
            schedule=tuple((int(e), float(m)) for e, m in sgd_doc.get("schedule", [[50, 1.0], [10, 0.1], [10, 0.01]])),
            seed=int(sgd_doc.get("seed", 0)),
        )
        gulf = None
        if "gulf" in doc and doc["gulf"] is not None:
            g = dict(doc["gulf"])
            generator = GENERATOR_HALF_SQUARED_NORM if method == "gulf1" else GENERATOR_LOSS
            gulf = GulfConfig(
                alpha=float(g["alpha"]),
                stages=int(g["stages"]),
                generator=g.get("generator", generator),
                m=int(g.get("m", 1)),
                init=str(g.get("init", INIT_RANDOM)),
                v=float(g.get("v", 2.0)),
                sgd=sgd,
            )
        dataset = dict(doc["dataset"])
        if "synthetic" in dataset:
            dataset = {"synthetic": SyntheticSpec.from_dict(dataset["synthetic"]).to_dict()}
        return ExperimentConfig(
            method=method,
            dataset=dataset,
            architecture=arch,
            loss=str(doc["loss"]),
            sgd=sgd,
            output_dir=str(doc.get("output_dir", "out")),
            seeds=tuple(int(s) for s in doc.get("seeds", [0])),
            gulf=gulf,
            stages=int(doc["stages"]) if "stages" in doc and doc["stages"] is not None else None,
            epsilon=float(doc["epsilon"]) if "epsilon" in doc and doc["epsilon"] is not None else None,
            alpha=float(doc["alpha"]) if "alpha" in doc and doc["alpha"] is not None else None,
            base_checkpoint=doc.get("base_checkpoint"),
        )
    except KeyError as exc:
        raise ConfigurationError(f"missing config field: {exc}") from exc


def config_to_dict(cfg: ExperimentConfig) -> dict:
    doc = {
        "method": cfg.method,
        "dataset": cfg.dataset,
        "architecture": cfg.architecture.to_dict(),
        "loss": cfg.loss,
        "sgd": {
            "lr": cfg.sgd.lr,
            "momentum": cfg.sgd.momentum,
            "weight_decay": cfg.sgd.weight_decay,
            "batch_size": cfg.sgd.batch_size,
            "schedule": [list(seg) for seg in cfg.sgd.schedule],
            "seed": cfg.sgd.seed,
        },
        "output_dir": cfg.output_dir,
        "seeds": list(cfg.seeds),
    }
    if cfg.gulf is not None:
        doc["gulf"] = {
            "alpha": cfg.gulf.alpha,
            "stages": cfg.gulf.stages,
            "generator": cfg.gulf.generator,
            "m": cfg.gulf.m,
            "init": cfg.gulf.init,
            "v": cfg.gulf.v,
        }
    if cfg.stages is not None:
        doc["stages"] = cfg.stages
    if cfg.epsilon is not None:
        doc["epsilon"] = cfg.epsilon
    if cfg.alpha is not None:
        doc["alpha"] = cfg.alpha
    if cfg.base_checkpoint is not None:
        doc["base_checkpoint"] = cfg.base_checkpoint
    return doc


def load_datasets(dataset_doc: dict) -> tuple[Dataset, Dataset]:
    if "synthetic" in dataset_doc:
        return gen_synthetic(SyntheticSpec.from_dict(dataset_doc["synthetic"]))
    if "csv" in dataset_doc:
        c = dataset_doc["csv"]
        label = c.get("label_column", "label")
        train = load_csv_dataset(c["train"], label)
        test = load_csv_dataset(c["test"], label) if "test" in c else train
        if c.get("standardize", False):
            train, test = standardize_features(train, test)
        return train, test
    raise ConfigurationError("dataset must provide a 'synthetic' or 'csv' section")


def _check_arch_matches(cfg: ExperimentConfig, train: Dataset) -> None:
    arch = cfg.architecture
    if arch.input_dim != train.input_dim:
        raise ConfigurationError(
            f"architecture input_dim {arch.input_dim} != dataset dim {train.input_dim}"
        )
    if cfg.loss == "squared_hinge":
        if arch.output_dim != 1 or train.num_classes != 2:
            raise ConfigurationError("squared hinge needs a binary dataset and output_dim=1")
    elif arch.output_dim != train.num_classes:
        raise ConfigurationError(
            f"architecture output_dim {arch.output_dim} != num classes {train.num_classes}"
        )


def _run_one_seed(cfg: ExperimentConfig, train, test, loss, seed: int, seed_dir: Path) -> dict:
    sgd = replace(cfg.sgd, seed=seed)
    arch = cfg.architecture
    lam = sgd.weight_decay
    seed_dir.mkdir(parents=True, exist_ok=True)

    reg_alpha = 1.0
    base_model = None
    if cfg.method == "base":
        checkpoints = [train_regular(train, arch, loss, sgd)]
        records = record_trajectory(checkpoints, train, test, loss, lam, reg_alpha, start_stage=1)
    elif cfg.method == "base-loop":
        model0 = init_random(arch, RngStream(seed))
        checkpoints = base_loop(train, model0, loss, sgd, cfg.stages)
        records = record_trajectory([model0] + checkpoints, train, test, loss, lam, reg_alpha)
    elif cfg.method == "base-lambda-alpha":
        reg_alpha = cfg.alpha
        checkpoints = [train_base_lambda_alpha(train, arch, loss, sgd, cfg.alpha)]
        records = record_trajectory(checkpoints, train, test, loss, lam, reg_alpha, start_stage=1)
    elif cfg.method == "label-smooth":
        checkpoints = [train_label_smoothing(train, arch, sgd, cfg.epsilon)]
        records = record_trajectory(checkpoints, train, test, loss, lam, reg_alpha, start_stage=1)
    else:  # gulf1 / gulf2
        gulf = replace(cfg.gulf, sgd=sgd)
        reg_alpha = gulf.alpha
        if gulf.init != INIT_RANDOM:
            if cfg.base_checkpoint:
                base_model = load_checkpoint(cfg.base_checkpoint)
            else:
                base_model = train_regular(train, arch, loss, sgd)
                save_checkpoint(base_model, seed_dir / "base_model.json")
        model0 = resolve_initial_model(gulf, arch, base_model)
        checkpoints = gulf_train(train, loss, arch, gulf, base=base_model)
        records = record_trajectory([model0] + checkpoints, train, test, loss, lam, reg_alpha)

    for t, model in enumerate(checkpoints, start=1):
        save_checkpoint(model, seed_dir / f"stage_{t}.json")
    write_trajectory_csv(records, seed_dir / "trajectory.csv")
    render_run_figures(records, seed_dir)

    stage_rows = [r for r in records if r.stage >= 1] or records
    best = min(stage_rows, key=lambda r: r.test_err)
    final = stage_rows[-1]
    return {
        "seed": seed,
        "final_test_err": final.test_err,
        "final_test_loss": final.test_loss,
        "final_train_loss": final.train_loss,
        "best_stage": best.stage,
        "best_test_err": best.test_err,
        "best_test_loss": best.test_loss,
    }


def run_experiment(
    cfg: ExperimentConfig,
    out_dir=None,
    force: bool = False,
    seed_override: int | None = None,
) -> dict:
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    if out.exists() and any(out.iterdir()) and not force:
        raise ConfigurationError(f"output directory {out} is not empty (use force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)

    train, test = load_datasets(cfg.dataset)
    _check_arch_matches(cfg, train)
    loss = make_loss(cfg.loss, cfg.architecture.output_dim if cfg.loss != "squared_hinge" else 2)

    seeds = (seed_override,) if seed_override is not None else cfg.seeds
    per_seed = []
    failures = []
    for seed in seeds:
        try:
            per_seed.append(_run_one_seed(cfg, train, test, loss, seed, out / f"seed_{seed}"))
        except GulfOptError as exc:
            failures.append({"seed": seed, "error": str(exc)})

    summary = {"config": config_to_dict(cfg), "per_seed": per_seed, "failures": failures}
    if per_seed:
        summary["median"] = {
            key: statistics.median(r[key] for r in per_seed)
            for key in ("final_test_err", "final_test_loss", "final_train_loss", "best_test_err")
        }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary
