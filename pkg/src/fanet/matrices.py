"""Dense matrix helpers: validation and numerically stable softmax/log primitives.

All matrices in this package are plain 2-D float64 numpy arrays in row-major
(C) order. Operations validate shapes and finiteness at entry and raise
:class:`ShapeError` / :class:`ValidationError` instead of broadcasting
silently.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "ShapeError",
    "ValidationError",
    "as_matrix",
    "check_finite",
    "check_same_shape",
    "softmax_rows",
    "softmax_cols",
    "softmax_matrix",
    "stable_log",
]

DEFAULT_EPS = 1e-12


class ValidationError(ValueError):
    """An input violates a documented precondition."""


class ShapeError(ValidationError):
    """Matrix dimensions do not match what the operation requires."""


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2-D float64 C-contiguous array, validating shape and finiteness."""
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got ndim={m.ndim}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise ShapeError(f"{name} must have at least one row and column, got {m.shape}")
    check_finite(m, name)
    return m


def check_finite(m: np.ndarray, name: str = "matrix") -> None:
    if not np.all(np.isfinite(m)):
        raise ValidationError(f"{name} contains non-finite entries")


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "operands") -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what} shapes differ: {a.shape} vs {b.shape}")


def softmax_rows(m) -> np.ndarray:
    """Row-wise softmax; every output row sums to 1.

    Stabilized by subtracting each row's maximum before exponentiation, so
    arbitrarily large finite logits do not overflow.
    """
    w = as_matrix(m, "logits")
    shifted = w - w.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cols(m) -> np.ndarray:
    """Column-wise softmax; every output column sums to 1."""
    w = as_matrix(m, "logits")
    shifted = w - w.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)


def softmax_matrix(m) -> np.ndarray:
    """Matrix-wise softmax: one distribution over all entries, summing to 1.

    Stabilized by subtracting the global maximum.
    """
    w = as_matrix(m, "logits")
    e = np.exp(w - w.max())
    return e / e.sum()


def stable_log(x: float, eps: float = DEFAULT_EPS) -> float:
    """log(max(x, eps)); guards log at x -> 0.

    x must be >= 0 and eps > 0.
    """
    if eps <= 0.0:
        raise ValidationError(f"eps must be positive, got {eps}")
    if x < 0.0:
        raise ValidationError(f"stable_log expects x >= 0, got {x}")
    return math.log(max(x, eps))
