"""Dense 2-D float64 kernel shared by the neural stages.

Arrays are plain ``numpy.ndarray`` objects of rank 2 and dtype float64.  The
helpers here add the shape checks, the optional analytic FLOP accounting and
the central-difference gradient oracle used by the test-suite.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes do not chain."""


@dataclass
class FlopCounter:
    """Explicit accumulator for analytic FLOP counts (2 per multiply-add)."""

    flops: int = 0

    def add(self, n: int) -> None:
        self.flops += int(n)


def as_dense(x, cols: int | None = None) -> np.ndarray:
    """Coerce ``x`` into a C-contiguous float64 matrix.

    A 1-D input becomes a single row.  ``cols`` fixes the width of an empty
    input so that a zero-row array still carries its column count.
    """
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(1, -1) if a.size or cols is None else a.reshape(0, cols)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D array, got shape {a.shape}")
    return np.ascontiguousarray(a)


def matmul(a: np.ndarray, b: np.ndarray, counter: FlopCounter | None = None) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    if counter is not None:
        counter.add(2 * a.shape[0] * a.shape[1] * b.shape[1])
    return a @ b


def softmax_rows(a: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    shifted = a - a.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def finite_diff_grad(f: Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, entry by entry.

    ``x`` is perturbed in place and restored, so ``f`` sees the same buffer
    each call.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite objective while perturbing entry {i}")
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """max |a - n| / max(|a| + |n|, floor); the usual symmetric gradient-check metric."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))
