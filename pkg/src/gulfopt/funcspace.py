"""Function-space laboratory: the model is a table of per-example outputs.

With no parameterization in the way, the mirror-descent guide dynamics are
exactly checkable: m damped-solver steps per row must reproduce the closed
form that says the loss gradient contracts by (1 - gamma)^m per step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import (
    ConvergenceFailureError,
    IdentityViolationError,
    InvalidDimensionError,
    InvalidParameterError,
)
from .losses import (
    BregmanGenerator,
    LossFn,
    guide_step_mirror_exact,
    loss_generator,
    onehot_rows,
)
from .numerics import softmax_rows


@dataclass(frozen=True)
class TabularFunction:
    """One row of logits per dataset example.

    Rows are zero-mean canonicalized when used with a cross-entropy
    generator (logits are only identified up to a per-row shift).
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise InvalidDimensionError(f"tabular function must be 2-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidParameterError("tabular function contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def num_rows(self) -> int:
        return self.values.shape[0]


def canonicalize_rows(f: TabularFunction) -> TabularFunction:
    v = f.values
    return TabularFunction(v - v.mean(axis=1, keepdims=True))


def tabular_mirror_descent(
    f: TabularFunction,
    labels,
    h_for_row,
    loss: LossFn,
    alpha: float,
    m: int,
) -> TabularFunction:
    """m exact mirror steps applied independently to every row.

    ``h_for_row`` maps a label to the row's Bregman generator (the generator
    may depend on y, e.g. h = L_y).
    """
    if alpha < 0:
        raise InvalidParameterError(f"alpha must be nonnegative, got {alpha}")
    if m < 1:
        raise InvalidParameterError(f"m must be at least 1, got {m}")
    y = np.asarray(labels)
    if y.shape[0] != f.num_rows:
        raise InvalidDimensionError("label count does not match row count")
    rows = []
    canonical = False
    for i in range(f.num_rows):
        h: BregmanGenerator = h_for_row(y[i])
        canonical = canonical or h.is_cross_entropy_generator
        q = f.values[i]
        try:
            for _ in range(int(m)):
                q = guide_step_mirror_exact(h, q, y[i], loss, alpha)
        except ConvergenceFailureError as exc:
            raise ConvergenceFailureError(f"row {i}: {exc}", residual=exc.residual) from exc
        rows.append(q)
    result = TabularFunction(np.vstack(rows))
    return canonicalize_rows(result) if canonical else result


def loss_generator_for(loss: LossFn):
    def h_for_row(y):
        return loss_generator(loss, int(y))

    return h_for_row


@dataclass(frozen=True)
class FunctionalIdentityReport:
    gamma: float
    m: int
    effective_alpha: float
    max_deviation: float
    threshold: float
    passed: bool
    worst_row: int
    guide_probabilities: np.ndarray


def prop21_functional_check(
    f: TabularFunction,
    labels,
    loss: LossFn,
    gamma: float,
    m: int,
    threshold: float = 1e-8,
) -> FunctionalIdentityReport:
    """Verify grad L_y(f*_m) = (1 - gamma)^m grad L_y(f) rowwise.

    f*_m comes from m exact mirror steps under h = L_y; the contracted
    gradient is the closed form the equivalence between the m-step and
    single-step algorithms rests on (effective step 1 - (1-gamma)^m).
    """
    if not (0.0 < gamma < 1.0):
        raise InvalidParameterError(f"gamma must lie in (0, 1), got {gamma}")
    fm = tabular_mirror_descent(f, labels, loss_generator_for(loss), loss, gamma, m)
    y = onehot_rows(labels, loss.num_classes)
    probs_after = softmax_rows(fm.values)
    grad_start = softmax_rows(f.values) - y
    grad_after = probs_after - y
    expected = (1.0 - gamma) ** int(m) * grad_start
    dev = np.abs(grad_after - expected)
    worst = int(np.unravel_index(np.argmax(dev), dev.shape)[0])
    max_dev = float(dev.max())
    report = FunctionalIdentityReport(
        gamma=float(gamma),
        m=int(m),
        effective_alpha=1.0 - (1.0 - gamma) ** int(m),
        max_deviation=max_dev,
        threshold=threshold,
        passed=max_dev < threshold,
        worst_row=worst,
        guide_probabilities=probs_after,
    )
    if not report.passed:
        raise IdentityViolationError(
            f"gradient-contraction identity violated: deviation {max_dev:.3e} at row {worst}",
            deviation=max_dev,
            worst_index=worst,
        )
    return report


def random_table(stream, n_rows: int, n_classes: int, scale: float = 1.0) -> TabularFunction:
    """A random zero-mean logit table for the verification suites."""
    vals = scale * stream.generator().standard_normal((n_rows, n_classes))
    return canonicalize_rows(TabularFunction(vals))
