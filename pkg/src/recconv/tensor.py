"""Rank-4 float64 tensors in (batch, channel, height, width) layout.

Tensors are plain C-contiguous ``numpy.ndarray`` objects; the helpers here only
add shape validation on top of numpy.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import ShapeError


class Shape2(NamedTuple):
    h: int
    w: int


def as_tensor4(x) -> np.ndarray:
    """Return ``x`` as a C-contiguous float64 rank-4 array, validating it."""
    a = np.ascontiguousarray(x, dtype=np.float64)
    if a.ndim != 4:
        raise ShapeError(f"expected a rank-4 tensor, got shape {a.shape}")
    if min(a.shape) < 1:
        raise ShapeError(f"every dimension must be >= 1, got {a.shape}")
    return a


def spatial(x: np.ndarray) -> Shape2:
    return Shape2(int(x.shape[2]), int(x.shape[3]))


def zeros(n: int, c: int, h: int, w: int) -> np.ndarray:
    dims = (n, c, h, w)
    if any(int(d) < 1 for d in dims):
        raise ShapeError(f"every dimension must be >= 1, got {dims}")
    return np.zeros(dims, dtype=np.float64)


def _same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _same_shape(a, b)
    return a + b


def concat_channels(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Concatenate along the channel axis, ``a``'s channels first."""
    if a.ndim != 4 or b.ndim != 4:
        raise ShapeError("concat_channels expects rank-4 tensors")
    if (a.shape[0], a.shape[2], a.shape[3]) != (b.shape[0], b.shape[2], b.shape[3]):
        raise ShapeError(f"batch/spatial mismatch: {a.shape} vs {b.shape}")
    return np.concatenate([a, b], axis=1)


def max_abs_diff(a: np.ndarray, b: np.ndarray) -> float:
    _same_shape(a, b)
    return float(np.max(np.abs(a - b)))
