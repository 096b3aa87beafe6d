"""Array primitives shared by the layers.

Arrays are plain row-major (C-order) numpy arrays. float64 is used for gradient
checks, float32 for training.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ShapeError

Tensor = np.ndarray

_REDUCERS = ("sum", "max", "argmax")


def as_tensor(data, shape: Sequence[int] | None = None, dtype=np.float64) -> Tensor:
    t = np.ascontiguousarray(np.asarray(data, dtype=dtype))
    if shape is not None:
        t = reshape(t.ravel(), shape)
    return t


def reshape(t: Tensor, new_shape: Sequence[int]) -> Tensor:
    new_shape = tuple(int(n) for n in new_shape)
    if any(n < 1 for n in new_shape):
        raise ShapeError(f"extents must be positive, got {new_shape}")
    if int(np.prod(new_shape, dtype=np.int64)) != t.size:
        raise ShapeError(f"cannot reshape {t.shape} ({t.size} elements) to {new_shape}")
    return np.ascontiguousarray(t).reshape(new_shape)


def elementwise(t: Tensor, f: Callable[[float], float]) -> Tensor:
    vf = np.vectorize(f, otypes=[t.dtype])
    return vf(t) if t.size else t.copy()


def pairwise_sum(values: np.ndarray) -> float:
    """Sum a 1-D buffer by recursive halving; order-stable and deterministic."""
    values = np.asarray(values, dtype=np.float64).ravel()
    n = values.size
    if n <= 8:
        total = 0.0
        for v in values:
            total += float(v)
        return total
    half = n // 2
    return pairwise_sum(values[:half]) + pairwise_sum(values[half:])


def reduce(t: Tensor, axis: int, op: str = "sum") -> Tensor:
    if op not in _REDUCERS:
        raise ValueError(f"unknown reduction {op!r}; expected one of {_REDUCERS}")
    if not 0 <= axis < t.ndim:
        raise ShapeError(f"axis {axis} out of range for rank {t.ndim}")
    if op == "sum":
        moved = np.moveaxis(t, axis, -1)
        out = np.apply_along_axis(pairwise_sum, -1, moved) if moved.size else moved.sum(-1)
        return np.asarray(out, dtype=t.dtype)
    if op == "max":
        return t.max(axis=axis)
    # np.argmax returns the first occurrence, i.e. the lowest index on ties
    return t.argmax(axis=axis)
