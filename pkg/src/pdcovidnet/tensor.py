"""Dense float64 tensors.

Tensors are plain C-contiguous ``numpy.ndarray`` objects of dtype float64.
The helpers here add the validation the rest of the package relies on:
explicit shape errors instead of silent broadcasting, and a fixed argmax
tie-break.
"""

from __future__ import annotations

from typing import Sequence, Union

import numpy as np

from .errors import AxisError, DomainError, ShapeError

Tensor = np.ndarray
DTYPE = np.float64

_BINARY = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
}


def _check_shape(shape: Sequence[int]) -> tuple[int, ...]:
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0:
        raise ShapeError("rank must be at least 1")
    if any(s < 1 for s in shape):
        raise ShapeError(f"all extents must be >= 1, got {shape}")
    return shape


def as_tensor(data) -> Tensor:
    t = np.ascontiguousarray(data, dtype=DTYPE)
    if t.ndim == 0:
        t = t.reshape(1)
    _check_shape(t.shape)
    return t


def zeros(shape: Sequence[int]) -> Tensor:
    return np.zeros(_check_shape(shape), dtype=DTYPE)


def zeros_like(t: Tensor) -> Tensor:
    return np.zeros_like(t, dtype=DTYPE)


def elementwise(op: str, a: Tensor, b: Union[Tensor, float]) -> Tensor:
    """Apply ``op`` in {add, sub, mul, max} elementwise.

    ``max`` takes a scalar right-hand side (``max(x, 0)`` is ReLU). The
    tensor-tensor ops require identical shapes; no broadcasting.
    """
    a = as_tensor(a)
    if op == "max":
        if not np.isscalar(b):
            raise ShapeError("max-with-scalar needs a scalar right operand")
        return np.maximum(a, float(b))
    try:
        fn = _BINARY[op]
    except KeyError:
        raise DomainError(f"unknown elementwise op {op!r}") from None
    if np.isscalar(b):
        return fn(a, float(b))
    b = as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return fn(a, b)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def reduce(op: str, t: Tensor, axis: int | None = None):
    """Reduce with ``sum``, ``max``, ``argmax`` or ``mean``.

    Without ``axis`` the whole tensor collapses to a Python scalar.
    ``argmax`` returns the lowest index among ties (flat index when
    ``axis`` is None).
    """
    t = as_tensor(t)
    if axis is not None and not -t.ndim <= axis < t.ndim:
        raise AxisError(f"axis {axis} out of range for rank {t.ndim}")
    if op == "sum":
        out = t.sum(axis=axis)
    elif op == "max":
        out = t.max(axis=axis)
    elif op == "mean":
        out = t.mean(axis=axis)
    elif op == "argmax":
        # numpy.argmax returns the first occurrence of the maximum
        out = np.argmax(t, axis=axis)
        return int(out) if axis is None else out
    else:
        raise DomainError(f"unknown reduction {op!r}")
    return float(out) if axis is None else np.ascontiguousarray(out)
