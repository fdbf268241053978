"""Metrics, the alpha-regularized loss, trajectory records, the descent
checker, and softmax-averaged ensembling.

The descent checker certifies, on a full-batch convex run, the per-stage
inequality

    l_alpha(theta_{t+1}) <= l_alpha(theta_t) - (alpha eta / 2) ||grad l_alpha(theta_t)||^2

together with its averaged consequence. It is confined to convex (no hidden
layer) models optimized by monotone full-batch descent, where the premise
"each stage improves on the single smooth-step iterate" can be enforced by
construction; stochastic nonconvex runs only monitor the l_alpha trend.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset, hinge_labels
from .exceptions import (
    HypothesisViolationError,
    InvalidDimensionError,
    InvalidInputError,
    InvalidParameterError,
)
from .losses import CROSS_ENTROPY, SQUARED, SQUARED_HINGE, LossFn
from .models import MlpArchitecture, MlpModel, backward, forward, param_norm_sq
from .numerics import RngStream, softmax_rows

TRAJECTORY_HEADER = (
    "stage",
    "train_loss",
    "test_loss",
    "train_err",
    "test_err",
    "reg_alpha_loss",
    "param_norm_sq",
)


def evaluate(model: MlpModel, data: Dataset, loss: LossFn) -> tuple[float, float]:
    """(mean loss, error rate). Argmax ties break toward the lowest class
    index; squared-hinge predicts by sign with sign(0) = +1."""
    if data.n == 0:
        raise InvalidInputError("cannot evaluate on an empty dataset")
    f = forward(model, data.X)
    if loss.kind == SQUARED_HINGE:
        labels = hinge_labels(data.y)
        mean_loss = float(loss.value_rows(f, labels).mean())
        pred = np.where(f[:, 0] >= 0.0, 1.0, -1.0)
        err = float(np.mean(pred != labels))
    else:
        mean_loss = float(loss.value_rows(f, data.y).mean())
        pred = np.argmax(f, axis=1)
        err = float(np.mean(pred != data.y))
    return mean_loss, err


def alpha_regularized_loss(model: MlpModel, data: Dataset, loss: LossFn, lam: float, alpha: float) -> float:
    """Mean loss plus (lambda/2)||theta||^2 / alpha."""
    if alpha <= 0:
        raise InvalidParameterError(f"alpha must be positive, got {alpha}")
    mean_loss, _ = evaluate(model, data, loss)
    return mean_loss + 0.5 * lam * param_norm_sq(model) / alpha


@dataclass(frozen=True)
class StageRecord:
    stage: int
    train_loss: float
    test_loss: float
    train_err: float
    test_err: float
    reg_alpha_loss: float
    param_norm_sq: float


def record_trajectory(
    checkpoints,
    train: Dataset,
    test: Dataset,
    loss: LossFn,
    lam: float,
    alpha: float,
    start_stage: int = 0,
) -> list[StageRecord]:
    """One record per checkpoint, stage-indexed from start_stage."""
    if not checkpoints:
        raise InvalidInputError("no checkpoints to record")
    records = []
    for t, model in enumerate(checkpoints, start=start_stage):
        train_loss, train_err = evaluate(model, train, loss)
        test_loss, test_err = evaluate(model, test, loss)
        records.append(
            StageRecord(
                stage=t,
                train_loss=train_loss,
                test_loss=test_loss,
                train_err=train_err,
                test_err=test_err,
                reg_alpha_loss=train_loss + 0.5 * lam * param_norm_sq(model) / alpha,
                param_norm_sq=param_norm_sq(model),
            )
        )
    return records


def write_trajectory_csv(records: list[StageRecord], path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRAJECTORY_HEADER)
        for r in records:
            writer.writerow(
                [r.stage]
                + [
                    format(v, ".17g")
                    for v in (
                        r.train_loss,
                        r.test_loss,
                        r.train_err,
                        r.test_err,
                        r.reg_alpha_loss,
                        r.param_norm_sq,
                    )
                ]
            )


def read_trajectory_csv(path) -> list[StageRecord]:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != TRAJECTORY_HEADER:
            raise InvalidInputError(f"unexpected trajectory header {header}")
        return [
            StageRecord(int(row[0]), *(float(v) for v in row[1:]))
            for row in reader
        ]


def ensemble_predict(models, X) -> np.ndarray:
    """Mean of per-model softmax outputs."""
    models = list(models)
    if not models:
        raise InvalidInputError("ensemble needs at least one model")
    dims = {m.arch.output_dim for m in models}
    if len(dims) != 1:
        raise InvalidInputError(f"models disagree on output dimension: {sorted(dims)}")
    if dims.pop() < 2:
        raise InvalidDimensionError("softmax ensembling needs at least 2 output logits")
    acc = None
    for m in models:
        p = softmax_rows(forward(m, X))
        acc = p if acc is None else acc + p
    return acc / len(models)


@dataclass(frozen=True)
class DescentCheckConfig:
    alpha: float
    stages: int
    eta: float | None = None
    beta: float = 1.0
    inner_steps: int = 200
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.alpha <= self.beta):
            raise InvalidParameterError(
                f"alpha must lie in (0, beta={self.beta}], got {self.alpha}"
            )
        if self.stages < 1:
            raise InvalidParameterError(f"stages must be >= 1, got {self.stages}")
        if self.eta is not None and self.eta <= 0:
            raise InvalidParameterError(f"eta must be positive, got {self.eta}")


@dataclass(frozen=True)
class DescentStageRecord:
    stage: int
    reg_alpha_loss: float
    grad_norm_sq: float
    slack: float


@dataclass(frozen=True)
class DescentReport:
    eta: float
    alpha: float
    stages: list[DescentStageRecord]
    final_reg_alpha_loss: float
    mean_grad_norm_sq: float
    averaged_bound: float
    passed: bool


def _estimate_smoothness(grad_fn, theta: np.ndarray, stream: RngStream, iters: int = 40) -> float:
    """Largest Hessian eigenvalue at theta via power iteration on
    central-difference Hessian-vector products."""
    v = stream.generator().standard_normal(theta.size)
    v /= np.linalg.norm(v)
    eps = 1e-5
    lam = 0.0
    for _ in range(iters):
        hv = (grad_fn(theta + eps * v) - grad_fn(theta - eps * v)) / (2.0 * eps)
        norm = float(np.linalg.norm(hv))
        if norm == 0.0:
            break
        lam = norm
        v = hv / norm
    return lam


def theorem21_descent_check(
    train: Dataset,
    arch: MlpArchitecture,
    loss: LossFn,
    cfg: DescentCheckConfig,
    lam: float,
    slack_tol: float = 1e-9,
) -> DescentReport:
    """Full-batch convex run of the guided loop, checking the stage descent
    inequality and the averaged gradient bound.

    The inner optimizer takes the single smooth step theta - eta grad Q_t
    first and then only accepts monotone improvements of Q_t, so the
    theorem's premise holds by construction. eta defaults to 1/(2 L) with L
    estimated by power iteration at the start.
    """
    if arch.hidden_dims:
        raise InvalidParameterError("the descent check requires a convex (no hidden layer) model")
    if loss.kind not in (CROSS_ENTROPY, SQUARED):
        raise InvalidParameterError("the descent check supports cross-entropy and squared losses")
    alpha = cfg.alpha
    n = train.n
    X = train.X
    y = train.y

    def data_grad_rows(theta: np.ndarray) -> np.ndarray:
        return loss.grad_rows(forward(MlpModel(arch, theta), X), y)

    def q_value(theta: np.ndarray, f_t: np.ndarray, g_t: np.ndarray) -> float:
        f = forward(MlpModel(arch, theta), X)
        d_rows = (
            loss.value_rows(f, y)
            - loss.value_rows(f_t, y)
            - np.sum(g_t * (f - f_t), axis=1)
        )
        linear = alpha * np.sum(g_t * f, axis=1)
        return float(np.mean(d_rows + linear)) + 0.5 * lam * float(theta @ theta)

    def q_grad(theta: np.ndarray, g_t: np.ndarray) -> np.ndarray:
        model = MlpModel(arch, theta)
        d = (loss.grad_rows(forward(model, X), y) - (1.0 - alpha) * g_t) / n
        return backward(model, X, d) + lam * theta

    def reg_loss(theta: np.ndarray) -> float:
        return alpha_regularized_loss(MlpModel(arch, theta), train, loss, lam, alpha)

    def reg_loss_grad(theta: np.ndarray) -> np.ndarray:
        model = MlpModel(arch, theta)
        d = data_grad_rows(theta) / n
        return backward(model, X, d) + (lam / alpha) * theta

    theta = np.zeros(arch.param_count)
    if cfg.eta is not None:
        eta = cfg.eta
    else:
        g0 = loss.grad_rows(forward(MlpModel(arch, theta), X), y)
        smoothness = _estimate_smoothness(
            lambda th: q_grad(th, g0), theta, RngStream(cfg.seed).child(0)
        )
        if smoothness <= 0:
            raise HypothesisViolationError("could not estimate a positive smoothness constant")
        eta = 1.0 / (2.0 * smoothness)

    stage_records = []
    l_start = reg_loss(theta)
    for t in range(cfg.stages):
        theta_t = theta.copy()
        f_t = forward(MlpModel(arch, theta_t), X)
        g_t = loss.grad_rows(f_t, y)
        l_t = reg_loss(theta_t)
        grad_sq = float(np.sum(reg_loss_grad(theta_t) ** 2))

        q_cur = q_value(theta_t, f_t, g_t)
        theta_tilde = theta_t - eta * q_grad(theta_t, g_t)
        q_tilde = q_value(theta_tilde, f_t, g_t)
        if q_tilde > q_cur + 1e-12 * max(1.0, abs(q_cur)):
            raise HypothesisViolationError(
                f"Q increased at the smooth step (stage {t}); reduce eta below {eta:.3e}"
            )
        theta, q_cur = theta_tilde, q_tilde
        for _ in range(cfg.inner_steps - 1):
            g = q_grad(theta, g_t)
            step = eta
            improved = False
            while step > 1e-18:
                cand = theta - step * g
                q_cand = q_value(cand, f_t, g_t)
                if q_cand <= q_cur:
                    theta, q_cur = cand, q_cand
                    improved = True
                    break
                step *= 0.5
            if not improved:
                break

        l_next = reg_loss(theta)
        slack = l_t - 0.5 * alpha * eta * grad_sq - l_next
        stage_records.append(
            DescentStageRecord(stage=t, reg_alpha_loss=l_t, grad_norm_sq=grad_sq, slack=slack)
        )

    l_final = reg_loss(theta)
    mean_grad_sq = float(np.mean([r.grad_norm_sq for r in stage_records]))
    bound = 2.0 * (l_start - l_final) / (alpha * eta * cfg.stages)
    passed = all(r.slack >= -slack_tol for r in stage_records) and mean_grad_sq <= bound + slack_tol
    return DescentReport(
        eta=eta,
        alpha=alpha,
        stages=stage_records,
        final_reg_alpha_loss=l_final,
        mean_grad_norm_sq=mean_grad_sq,
        averaged_bound=bound,
        passed=passed,
    )
