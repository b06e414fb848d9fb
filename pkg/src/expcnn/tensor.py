"""Dense numeric arrays with a channels-last image layout.

Tensors are plain C-order (row-major) numpy arrays; 4-D image tensors are
(batch, height, width, channels) with channels fastest-varying. float32 is
the training precision, float64 backs gradient checking. Operations here
are value-semantic: inputs are never mutated and results are independent
arrays.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NumericError, ShapeError

Shape = tuple[int, ...]
Tensor = np.ndarray

FLOAT32 = np.float32
FLOAT64 = np.float64


def tensor(values, dtype=FLOAT32) -> Tensor:
    """Build a C-contiguous tensor from nested sequences or an array."""
    arr = np.array(values, dtype=dtype, order="C")
    _require_finite(arr, "tensor")
    return arr


def _require_finite(arr: Tensor, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{op} produced non-finite values")


def element_count(shape: Sequence[int]) -> int:
    n = 1
    for extent in shape:
        if extent < 1:
            raise ShapeError(f"extent {extent} < 1 in shape {tuple(shape)}")
        n *= extent
    return n


def reshape(t: Tensor, shape: Sequence[int]) -> Tensor:
    """Return a copy of `t` with the given shape; element order unchanged."""
    shape = tuple(int(s) for s in shape)
    if element_count(shape) != t.size:
        raise ShapeError(
            f"cannot reshape {t.shape} ({t.size} elements) to {shape} "
            f"({element_count(shape)} elements)"
        )
    return np.ascontiguousarray(t).reshape(shape).copy()


def map_elementwise(t: Tensor, f: Callable[[float], float]) -> Tensor:
    """Apply a scalar function to every element, preserving shape and dtype."""
    out = np.vectorize(f, otypes=[t.dtype])(t)
    _require_finite(out, "map_elementwise")
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Standard matrix product of two rank-2 tensors."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner extents differ: {a.shape} x {b.shape}")
    out = a @ b
    _require_finite(out, "matmul")
    return out


def spatial_mean(t: Tensor) -> Tensor:
    """Mean over the spatial axes of a (batch, h, w, channels) tensor."""
    if t.ndim != 4:
        raise ShapeError(f"spatial_mean needs a rank-4 tensor, got shape {t.shape}")
    return t.mean(axis=(1, 2))
