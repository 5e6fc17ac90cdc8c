"""Dense tensor arithmetic on top of numpy.

A tensor here is a plain ``numpy.ndarray`` (float64 by default). The
functions below add the contract the rest of the package relies on: only
scalar (rank-0) broadcasting, strict ``gt0``, rank-2 ``matmul`` and
read-only results.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64

DTYPES = {"f64": np.float64, "f32": np.float32}


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


_BINARY = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
}

_UNARY = {
    "exp": np.exp,
    "log": np.log,
    "tanh": np.tanh,
    "neg": np.negative,
}


def freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def tensor(data, dtype=None) -> np.ndarray:
    """Build a read-only tensor from nested sequences, scalars or arrays."""
    out = np.array(data, dtype=dtype or DEFAULT_DTYPE)
    return freeze(out)


def scalar(value: float, dtype=None) -> np.ndarray:
    return tensor(float(value), dtype)


def zeros(shape: Sequence[int], dtype=None) -> np.ndarray:
    return freeze(np.zeros(tuple(shape), dtype=dtype or DEFAULT_DTYPE))


def ones(shape: Sequence[int], dtype=None) -> np.ndarray:
    return freeze(np.ones(tuple(shape), dtype=dtype or DEFAULT_DTYPE))


def full(shape: Sequence[int], value: float, dtype=None) -> np.ndarray:
    return freeze(np.full(tuple(shape), value, dtype=dtype or DEFAULT_DTYPE))


def result_shape(a: tuple, b: tuple) -> tuple:
    """Shape of a binary elementwise result under scalar-only broadcasting."""
    if a == b or b == ():
        return a
    if a == ():
        return b
    raise ShapeError(f"shape mismatch: {a} vs {b} (only scalar broadcast)")


def elementwise(op: str, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    fn = _BINARY[op]
    result_shape(a.shape, b.shape)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = fn(a, b)
    return freeze(np.asarray(out))


def map_unary(op: str, a: np.ndarray) -> np.ndarray:
    if op == "gt0":
        return freeze(np.asarray(a > 0.0).astype(a.dtype))
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        out = _UNARY[op](a)
    return freeze(np.asarray(out))


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    return freeze(np.matmul(a, b))


def reduce_sum(a: np.ndarray, axis: Optional[int] = None) -> np.ndarray:
    if axis is not None and not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"axis {axis} out of range for rank {a.ndim}")
    if a.size == 0 and axis is None:
        return freeze(np.zeros((), dtype=a.dtype))
    return freeze(np.asarray(np.sum(a, axis=axis)))
