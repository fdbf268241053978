"""Dense numeric primitives: stable reductions, seeded randomness, finite differences.

Vectors and matrices are plain float64 numpy arrays throughout the package;
no wrapper classes. Every public function here is pure: the same inputs give
bitwise-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .exceptions import (
    InvalidDimensionError,
    InvalidInputError,
    InvalidParameterError,
    OracleFailureError,
)

# Identifier of the random stream construction: Philox4x64 keyed by a
# splitmix64 hash chain over (seed, child path).
RNG_ALGORITHM = "philox4x64/splitmix64-path"

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    # Finalizer of the splitmix64 generator; a fixed, platform-independent
    # 64-bit mixing function.
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


@dataclass(frozen=True)
class RngStream:
    """Splittable, counter-based random stream with value semantics.

    A stream is identified by a 64-bit seed plus a path of child indices.
    ``child(i)`` derives an independent stream; the same (seed, path) always
    yields the same draws on every platform.
    """

    seed: int
    path: tuple[int, ...] = ()

    def __post_init__(self):
        if not (0 <= int(self.seed) <= _MASK64):
            raise InvalidParameterError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    def child(self, index: int) -> "RngStream":
        return RngStream(self.seed, self.path + (int(index),))

    def _key(self) -> tuple[int, int]:
        k = _splitmix64(int(self.seed))
        for idx in self.path:
            k = _splitmix64(k ^ _splitmix64((idx + 1) & _MASK64))
        return k, _splitmix64(k ^ 0xD1B54A32D192ED03)

    def generator(self) -> np.random.Generator:
        """A fresh generator positioned at the start of this stream."""
        k0, k1 = self._key()
        return np.random.Generator(np.random.Philox(key=np.array([k0, k1], dtype=np.uint64)))


def as_vector(v, name: str = "vector") -> np.ndarray:
    a = np.asarray(v, dtype=np.float64)
    if a.ndim != 1:
        raise InvalidDimensionError(f"{name} must be 1-D, got shape {a.shape}")
    return a


def stable_softmax(logits) -> np.ndarray:
    """Softmax computed with max-subtraction; no overflow for finite input."""
    u = as_vector(logits, "logits")
    if u.size < 2:
        raise InvalidDimensionError(f"softmax needs at least 2 logits, got {u.size}")
    if not np.all(np.isfinite(u)):
        raise InvalidInputError("logits contain non-finite values")
    e = np.exp(u - np.max(u))
    return e / np.sum(e)


def softmax_rows(logits) -> np.ndarray:
    """Rowwise stable softmax of a 2-D logit array."""
    U = np.asarray(logits, dtype=np.float64)
    if U.ndim != 2 or U.shape[1] < 2:
        raise InvalidDimensionError(f"expected (n, K>=2) logits, got shape {U.shape}")
    E = np.exp(U - np.max(U, axis=1, keepdims=True))
    return E / np.sum(E, axis=1, keepdims=True)


def log_sum_exp(v) -> float:
    """ln sum exp(v_i), computed with max-subtraction."""
    u = as_vector(v)
    if u.size == 0:
        raise InvalidDimensionError("log_sum_exp of an empty vector")
    m = float(np.max(u))
    return m + float(np.log(np.sum(np.exp(u - m))))


def log_sum_exp_rows(M) -> np.ndarray:
    U = np.asarray(M, dtype=np.float64)
    if U.ndim != 2 or U.shape[1] == 0:
        raise InvalidDimensionError(f"expected a nonempty 2-D array, got shape {U.shape}")
    m = np.max(U, axis=1)
    return m + np.log(np.sum(np.exp(U - m[:, None]), axis=1))


def finite_diff_grad(fn: Callable[[np.ndarray], float], x, eps: float) -> np.ndarray:
    """Central-difference gradient estimate of a scalar function.

    The oracle for every analytic-gradient check in the package. Raises
    OracleFailureError naming the coordinate if a probe is non-finite.
    """
    if eps <= 0:
        raise InvalidParameterError(f"eps must be positive, got {eps}")
    x0 = as_vector(x, "x").copy()
    g = np.empty_like(x0)
    for i in range(x0.size):
        xi = x0[i]
        x0[i] = xi + eps
        fp = float(fn(x0))
        x0[i] = xi - eps
        fm = float(fn(x0))
        x0[i] = xi
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise OracleFailureError(f"non-finite probe value at coordinate {i}")
        g[i] = (fp - fm) / (2.0 * eps)
    return g


def finite_diff_directional(fn: Callable[[np.ndarray], float], x, v, eps: float) -> float:
    """Central-difference directional derivative of fn at x along v."""
    if eps <= 0:
        raise InvalidParameterError(f"eps must be positive, got {eps}")
    x0 = as_vector(x, "x")
    d = as_vector(v, "v")
    fp = float(fn(x0 + eps * d))
    fm = float(fn(x0 - eps * d))
    if not (np.isfinite(fp) and np.isfinite(fm)):
        raise OracleFailureError("non-finite probe value in directional difference")
    return (fp - fm) / (2.0 * eps)


def rng_normal(stream: RngStream, n: int, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
    """n Gaussian draws from the stream; pure (same stream -> same vector)."""
    if std < 0:
        raise InvalidParameterError(f"std must be nonnegative, got {std}")
    if std == 0.0:
        return np.full(int(n), float(mean))
    return stream.generator().normal(float(mean), float(std), size=int(n))


def rng_permutation(stream: RngStream, n: int) -> np.ndarray:
    """A seeded permutation of range(n); pure."""
    return stream.generator().permutation(int(n))
