"""Multilayer perceptrons with a flat parameter vector and analytic backprop.

Parameter layout is fixed and layer-major: for each layer, the weight matrix
(row-major, shape out x in) followed by the bias. All norms, checkpoints, and
gradient comparisons refer to this layout.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import InvalidDimensionError, InvalidParameterError
from .numerics import RngStream, rng_normal

ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class MlpArchitecture:
    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(d < 1 for d in dims):
            raise InvalidParameterError(f"all layer dimensions must be >= 1, got {dims}")
        if self.activation not in ACTIVATIONS:
            raise InvalidParameterError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, self.output_dim)

    @property
    def num_layers(self) -> int:
        return len(self.layer_dims) - 1

    @property
    def param_count(self) -> int:
        dims = self.layer_dims
        return sum(dims[i + 1] * dims[i] + dims[i + 1] for i in range(self.num_layers))

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_dims": list(self.hidden_dims),
            "output_dim": self.output_dim,
            "activation": self.activation,
        }

    @staticmethod
    def from_dict(d: dict) -> "MlpArchitecture":
        return MlpArchitecture(
            int(d["input_dim"]),
            tuple(int(h) for h in d["hidden_dims"]),
            int(d["output_dim"]),
            str(d.get("activation", "relu")),
        )


@dataclass(frozen=True)
class MlpModel:
    arch: MlpArchitecture
    theta: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.theta, dtype=np.float64)
        if t.ndim != 1 or t.size != self.arch.param_count:
            raise InvalidDimensionError(
                f"theta has {t.size} entries, architecture needs {self.arch.param_count}"
            )
        object.__setattr__(self, "theta", t)


def split_params(model: MlpModel) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views of theta as per-layer (W, b) in the documented layout."""
    dims = model.arch.layer_dims
    out = []
    off = 0
    for layer in range(model.arch.num_layers):
        n_out, n_in = dims[layer + 1], dims[layer]
        w = model.theta[off : off + n_out * n_in].reshape(n_out, n_in)
        off += n_out * n_in
        b = model.theta[off : off + n_out]
        off += n_out
        out.append((w, b))
    return out


def from_params(arch: MlpArchitecture, params: list[tuple[np.ndarray, np.ndarray]]) -> MlpModel:
    """Inverse of split_params; round-trips bitwise."""
    theta = np.concatenate([np.concatenate([w.ravel(), b]) for w, b in params])
    return MlpModel(arch, theta)


def init_random(arch: MlpArchitecture, stream: RngStream) -> MlpModel:
    """Kaiming-style normal init: weight std sqrt(gain/fan_in), zero biases.

    gain is 2 for relu and 1 for tanh. Layer l draws from stream.child(l),
    so the same stream always produces the same parameters.
    """
    gain = 2.0 if arch.activation == "relu" else 1.0
    dims = arch.layer_dims
    params = []
    for layer in range(arch.num_layers):
        n_out, n_in = dims[layer + 1], dims[layer]
        std = math.sqrt(gain / n_in)
        w = rng_normal(stream.child(layer), n_out * n_in, 0.0, std).reshape(n_out, n_in)
        params.append((w, np.zeros(n_out)))
    return from_params(arch, params)


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activate_deriv(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        # Subgradient 0 at the kink.
        return (z > 0.0).astype(np.float64)
    t = np.tanh(z)
    return 1.0 - t * t


def _forward_cached(model: MlpModel, X: np.ndarray):
    params = split_params(model)
    act = model.arch.activation
    a = X
    activations = [a]
    preacts = []
    for layer, (w, b) in enumerate(params):
        z = a @ w.T + b
        if layer < len(params) - 1:
            preacts.append(z)
            a = _activate(z, act)
            activations.append(a)
        else:
            a = z
    return a, activations, preacts


def forward(model: MlpModel, X) -> np.ndarray:
    """Logits, one row per input row."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.arch.input_dim:
        raise InvalidDimensionError(
            f"input has shape {X.shape}, expected (n, {model.arch.input_dim})"
        )
    logits, _, _ = _forward_cached(model, X)
    return logits


def backward(model: MlpModel, X, grad_out) -> np.ndarray:
    """Gradient w.r.t. theta of sum_i grad_out[i] . f(theta; x_i)."""
    X = np.asarray(X, dtype=np.float64)
    G = np.asarray(grad_out, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.arch.input_dim:
        raise InvalidDimensionError(
            f"input has shape {X.shape}, expected (n, {model.arch.input_dim})"
        )
    if G.shape != (X.shape[0], model.arch.output_dim):
        raise InvalidDimensionError(
            f"grad_out has shape {G.shape}, expected {(X.shape[0], model.arch.output_dim)}"
        )
    params = split_params(model)
    act = model.arch.activation
    _, activations, preacts = _forward_cached(model, X)

    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(params)
    delta = G
    for layer in range(len(params) - 1, -1, -1):
        w, _ = params[layer]
        gw = delta.T @ activations[layer]
        gb = delta.sum(axis=0)
        grads[layer] = (gw, gb)
        if layer > 0:
            delta = (delta @ w) * _activate_deriv(preacts[layer - 1], act)
    return np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])


def shrink_last_layer(model: MlpModel, v: float) -> MlpModel:
    """Divide the final layer's weights and bias by v; other layers unchanged."""
    if v <= 0:
        raise InvalidParameterError(f"shrink factor must be positive, got {v}")
    theta = model.theta.copy()
    dims = model.arch.layer_dims
    last = dims[-1] * dims[-2] + dims[-1]
    theta[-last:] = theta[-last:] / v
    return MlpModel(model.arch, theta)


def param_norm_sq(model: MlpModel) -> float:
    return float(model.theta @ model.theta)


def _format_float(x: float) -> str:
    # 17 significant digits: enough for a bitwise float64 round-trip.
    return format(float(x), ".17g")


def checkpoint_text(model: MlpModel) -> str:
    arch = model.arch
    head = (
        '{"architecture": {"input_dim": %d, "hidden_dims": [%s], '
        '"output_dim": %d, "activation": "%s"}, "theta": [%s]}'
    )
    return head % (
        arch.input_dim,
        ", ".join(str(h) for h in arch.hidden_dims),
        arch.output_dim,
        arch.activation,
        ", ".join(_format_float(x) for x in model.theta),
    )


def save_checkpoint(model: MlpModel, path) -> None:
    Path(path).write_text(checkpoint_text(model) + "\n")


def load_checkpoint(path) -> MlpModel:
    doc = json.loads(Path(path).read_text())
    arch = MlpArchitecture.from_dict(doc["architecture"])
    return MlpModel(arch, np.asarray(doc["theta"], dtype=np.float64))
