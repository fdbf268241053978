"""Training procedures: the SGD engine, regular/baseline training, and the
guided stage loops.

All runs are deterministic functions of their config seed. Random streams are
derived once per purpose: parameter init consumes ``RngStream(seed)`` itself
(one child per layer), and the stage-t inner loop shuffles with
``RngStream(seed).child(STAGE_STREAM_OFFSET + t)``, one grandchild per epoch.
The offset keeps stage streams disjoint from the init streams. Because the
stream derivation depends only on (seed, t), the plain warm-restart loop and
the guided loop with full step size see identical batch sequences, which is
what makes their equivalence checkable bitwise.

Per stage, the learning-rate schedule restarts, the momentum buffer resets,
and the parameter warm-starts from the previous stage's result.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset, hinge_labels
from .exceptions import (
    ConfigurationError,
    DivergenceError,
    IdentityViolationError,
    InvalidInputError,
    InvalidParameterError,
)
from .losses import CROSS_ENTROPY, SQUARED_HINGE, LossFn, onehot_rows
from .models import MlpArchitecture, MlpModel, backward, forward, init_random, shrink_last_layer
from .numerics import RngStream, softmax_rows

STAGE_STREAM_OFFSET = 1 << 20

INIT_RANDOM = "random"
INIT_BASE = "base"
INIT_BASE_OVER_V = "base_over_v"

GENERATOR_HALF_SQUARED_NORM = "half_squared_norm"
GENERATOR_LOSS = "loss"


@dataclass(frozen=True)
class SgdConfig:
    lr: float
    momentum: float = 0.9
    weight_decay: float = 0.0
    batch_size: int = 128
    schedule: tuple[tuple[int, float], ...] = ((50, 1.0), (10, 0.1), (10, 0.01))
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(
            self, "schedule", tuple((int(e), float(m)) for e, m in self.schedule)
        )
        if self.lr <= 0:
            raise InvalidParameterError(f"lr must be positive, got {self.lr}")
        if not (0.0 <= self.momentum < 1.0):
            raise InvalidParameterError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise InvalidParameterError(f"weight decay must be nonnegative, got {self.weight_decay}")
        if self.batch_size < 1:
            raise InvalidParameterError(f"batch size must be >= 1, got {self.batch_size}")
        if not self.schedule:
            raise InvalidParameterError("schedule must be nonempty")
        mults = [m for _, m in self.schedule]
        if any(m <= 0 for m in mults) or any(b > a for a, b in zip(mults, mults[1:])):
            raise InvalidParameterError("schedule multipliers must be positive and non-increasing")
        if any(e < 0 for e, _ in self.schedule):
            raise InvalidParameterError("schedule epoch counts must be nonnegative")


@dataclass(frozen=True)
class GulfConfig:
    alpha: float
    stages: int
    generator: str = GENERATOR_LOSS
    m: int = 1
    init: str = INIT_RANDOM
    v: float = 2.0
    sgd: SgdConfig = None

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise InvalidParameterError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.stages < 1:
            raise InvalidParameterError(f"stages must be >= 1, got {self.stages}")
        if self.generator not in (GENERATOR_HALF_SQUARED_NORM, GENERATOR_LOSS):
            raise InvalidParameterError(f"unknown generator kind {self.generator!r}")
        if self.m < 1:
            raise InvalidParameterError(f"m must be >= 1, got {self.m}")
        if self.init not in (INIT_RANDOM, INIT_BASE, INIT_BASE_OVER_V):
            raise InvalidParameterError(f"unknown init strategy {self.init!r}")
        if self.init == INIT_BASE_OVER_V and self.v <= 0:
            raise InvalidParameterError(f"shrink factor must be positive, got {self.v}")
        if self.sgd is None:
            raise InvalidParameterError("gulf config needs an sgd config")


@dataclass(frozen=True)
class FrozenReference:
    """Snapshot of the stage-t model; guide targets are recomputed per batch."""

    model: MlpModel


def freeze(model: MlpModel) -> FrozenReference:
    return FrozenReference(MlpModel(model.arch, model.theta.copy()))


def _stage_stream(seed: int, stage: int) -> RngStream:
    return RngStream(seed).child(STAGE_STREAM_OFFSET + stage)


def sgd_run(model: MlpModel, num_examples: int, grad_fn, cfg: SgdConfig, stream: RngStream) -> MlpModel:
    """Heavy-ball SGD over the full schedule: v <- mu v - lr g, theta <- theta + v.

    grad_fn(model, idx) returns the data-term gradient averaged over the
    batch; the weight-decay gradient (lambda theta) is added here. Batch order
    comes from a seeded shuffle per epoch; the run is pure given the stream.
    """
    theta = model.theta.copy()
    velocity = np.zeros_like(theta)
    step = 0
    epoch = 0
    for seg_epochs, mult in cfg.schedule:
        lr = cfg.lr * mult
        for _ in range(seg_epochs):
            perm = stream.child(epoch).generator().permutation(num_examples)
            for start in range(0, num_examples, cfg.batch_size):
                idx = perm[start : start + cfg.batch_size]
                g = grad_fn(MlpModel(model.arch, theta), idx)
                if not np.all(np.isfinite(g)):
                    raise DivergenceError(f"non-finite gradient at step {step}", step=step)
                g = g + cfg.weight_decay * theta
                velocity = cfg.momentum * velocity - lr * g
                theta = theta + velocity
                step += 1
            epoch += 1
    return MlpModel(model.arch, theta)


def _loss_targets(loss: LossFn, y: np.ndarray):
    return hinge_labels(y) if loss.kind == SQUARED_HINGE else y


def make_regular_gradient(data: Dataset, loss: LossFn):
    labels = _loss_targets(loss, data.y)

    def grad_fn(model: MlpModel, idx) -> np.ndarray:
        xb = data.X[idx]
        f = forward(model, xb)
        d = loss.grad_rows(f, labels[idx]) / len(idx)
        return backward(model, xb, d)

    return grad_fn


def make_label_smoothing_gradient(data: Dataset, num_classes: int, epsilon: float):
    if not (0.0 <= epsilon < 1.0):
        raise InvalidParameterError(f"epsilon must lie in [0, 1), got {epsilon}")
    hot = onehot_rows(data.y, num_classes)
    off = epsilon / (num_classes - 1)
    soft = (1.0 - epsilon) * hot + off * (1.0 - hot)

    def grad_fn(model: MlpModel, idx) -> np.ndarray:
        xb = data.X[idx]
        d = (softmax_rows(forward(model, xb)) - soft[idx]) / len(idx)
        return backward(model, xb, d)

    return grad_fn


def make_gulf1_gradient(data: Dataset, loss: LossFn, frozen: FrozenReference, alpha: float, m: int):
    """Squared fit to the m-step first-order guide of the frozen model."""
    labels = _loss_targets(loss, data.y)

    def grad_fn(model: MlpModel, idx) -> np.ndarray:
        xb = data.X[idx]
        yb = labels[idx]
        target = forward(frozen.model, xb)
        for _ in range(int(m)):
            target = target - alpha * loss.grad_rows(target, yb)
        d = (forward(model, xb) - target) / len(idx)
        return backward(model, xb, d)

    return grad_fn


def check_probability_rows(rows: np.ndarray, tol: float = 1e-12) -> None:
    sums = rows.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > tol) or np.any(rows < 0.0) or np.any(rows > 1.0):
        raise InvalidInputError("guide mixture is not a valid probability distribution")


def make_gulf2_gradient(data: Dataset, loss: LossFn, frozen: FrozenReference, alpha: float):
    """Distillation-form inner gradient for cross-entropy; the divergence-plus-
    linear-term form for squared and squared-hinge losses (same gradient)."""
    if loss.kind == CROSS_ENTROPY:
        hot = onehot_rows(data.y, loss.num_classes)

        def grad_fn(model: MlpModel, idx) -> np.ndarray:
            xb = data.X[idx]
            p_t = softmax_rows(forward(frozen.model, xb))
            # hot + (1-alpha)(p_t - hot) stays in [0, 1] exactly; at alpha=1 it
            # is bitwise the one-hot target, collapsing to regular training.
            mix = hot[idx] + (1.0 - alpha) * (p_t - hot[idx])
            check_probability_rows(mix)
            d = (softmax_rows(forward(model, xb)) - mix) / len(idx)
            return backward(model, xb, d)

        return grad_fn

    labels = _loss_targets(loss, data.y)

    def grad_fn(model: MlpModel, idx) -> np.ndarray:
        xb = data.X[idx]
        yb = labels[idx]
        g_t = loss.grad_rows(forward(frozen.model, xb), yb)
        d = (loss.grad_rows(forward(model, xb), yb) - (1.0 - alpha) * g_t) / len(idx)
        return backward(model, xb, d)

    return grad_fn


def train_regular(data: Dataset, arch: MlpArchitecture, loss: LossFn, cfg: SgdConfig) -> MlpModel:
    """The base model: one full schedule on mean loss + (lambda/2)||theta||^2."""
    model = init_random(arch, RngStream(cfg.seed))
    return sgd_run(model, data.n, make_regular_gradient(data, loss), cfg, _stage_stream(cfg.seed, 0))


def base_loop(data: Dataset, model0: MlpModel, loss: LossFn, cfg: SgdConfig, stages: int) -> list[MlpModel]:
    """Warm-restarted regular training: T repeats of the schedule, theta carried over."""
    if stages < 1:
        raise InvalidParameterError(f"stages must be >= 1, got {stages}")
    grad_fn = make_regular_gradient(data, loss)
    model = model0
    out = []
    for t in range(stages):
        model = sgd_run(model, data.n, grad_fn, cfg, _stage_stream(cfg.seed, t))
        out.append(model)
    return out


def train_base_lambda_alpha(data: Dataset, arch: MlpArchitecture, loss: LossFn, cfg: SgdConfig, alpha: float) -> MlpModel:
    """Regular training with weight decay inflated to lambda / alpha."""
    if not (0.0 < alpha <= 1.0):
        raise InvalidParameterError(f"alpha must lie in (0, 1], got {alpha}")
    return train_regular(data, arch, loss, replace(cfg, weight_decay=cfg.weight_decay / alpha))


def train_label_smoothing(data: Dataset, arch: MlpArchitecture, cfg: SgdConfig, epsilon: float) -> MlpModel:
    """Cross-entropy against 1-eps on the true class, eps/(K-1) elsewhere."""
    k = arch.output_dim
    if k < 2:
        raise InvalidParameterError("label smoothing needs at least 2 classes")
    model = init_random(arch, RngStream(cfg.seed))
    grad_fn = make_label_smoothing_gradient(data, k, epsilon)
    return sgd_run(model, data.n, grad_fn, cfg, _stage_stream(cfg.seed, 0))


def gulf_stage(
    model: MlpModel,
    data: Dataset,
    loss: LossFn,
    generator: str,
    alpha: float,
    m: int,
    cfg: SgdConfig,
    stage_stream: RngStream,
) -> MlpModel:
    """One guided stage: freeze the model, fit toward its guide, warm-started."""
    if not (0.0 < alpha <= 1.0):
        raise InvalidParameterError(f"alpha must lie in (0, 1], got {alpha}")
    frozen = freeze(model)
    if generator == GENERATOR_HALF_SQUARED_NORM:
        grad_fn = make_gulf1_gradient(data, loss, frozen, alpha, m)
    elif generator == GENERATOR_LOSS:
        grad_fn = make_gulf2_gradient(data, loss, frozen, alpha)
    else:
        raise InvalidParameterError(f"unknown generator kind {generator!r}")
    return sgd_run(model, data.n, grad_fn, cfg, stage_stream)


def resolve_initial_model(
    gulf: GulfConfig, arch: MlpArchitecture, base: MlpModel | None
) -> MlpModel:
    if gulf.init == INIT_RANDOM:
        return init_random(arch, RngStream(gulf.sgd.seed))
    if base is None:
        raise ConfigurationError(f"init strategy {gulf.init!r} requires a base model")
    if base.arch != arch:
        raise ConfigurationError("base model architecture does not match the experiment architecture")
    if gulf.init == INIT_BASE:
        return base
    return shrink_last_layer(base, gulf.v)


def gulf_train(
    data: Dataset,
    loss: LossFn,
    arch: MlpArchitecture,
    gulf: GulfConfig,
    base: MlpModel | None = None,
) -> list[MlpModel]:
    """Run T guided stages from the configured start; returns theta_1..theta_T."""
    model = resolve_initial_model(gulf, arch, base)
    out = []
    for t in range(gulf.stages):
        model = gulf_stage(
            model, data, loss, gulf.generator, gulf.alpha, gulf.m, gulf.sgd,
            _stage_stream(gulf.sgd.seed, t),
        )
        out.append(model)
    return out


@dataclass(frozen=True)
class GradIdentityReport:
    max_deviation: float
    threshold: float
    passed: bool


def prop22_grad_identity_check(
    model: MlpModel,
    frozen_model: MlpModel,
    data: Dataset,
    idx,
    alpha: float,
    loss: LossFn,
    threshold: float = 1e-8,
) -> GradIdentityReport:
    """Parameter gradients of the divergence-form and distillation-form
    objectives on the same batch must agree.

    Form A: mean[ D_{L_y}(f_theta, f_t) + alpha grad L_y(f_t) . f_theta ].
    Form B: mean[ (1-alpha) L(f_theta, p(f_t)) + alpha L_y(f_theta) ].
    The two are computed through independent code paths.
    """
    if loss.kind != CROSS_ENTROPY:
        raise InvalidParameterError("the gradient identity check targets the cross-entropy loss")
    idx = np.asarray(idx, dtype=np.int64)
    xb = data.X[idx]
    yb = data.y[idx]
    hot = onehot_rows(yb, loss.num_classes)

    f_t = forward(frozen_model, xb)
    f = forward(model, xb)
    p = softmax_rows(f)
    p_t = softmax_rows(f_t)

    # Form A: d/df [D_{L_y}(f, f_t) + alpha grad L_y(f_t) . f]
    d_a = ((p - hot) - (1.0 - alpha) * (p_t - hot)) / len(idx)
    g_a = backward(model, xb, d_a)

    # Form B: d/df [(1-alpha) CE(f, p_t) + alpha CE(f, y)]
    d_b = ((1.0 - alpha) * (p - p_t) + alpha * (p - hot)) / len(idx)
    g_b = backward(model, xb, d_b)

    dev = float(np.max(np.abs(g_a - g_b)))
    report = GradIdentityReport(max_deviation=dev, threshold=threshold, passed=dev < threshold)
    if not report.passed:
        raise IdentityViolationError(
            f"objective-gradient identity violated: deviation {dev:.3e}", deviation=dev
        )
    return report
