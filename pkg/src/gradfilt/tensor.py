"""Rank-4 tensor wrappers and exact linear-algebra primitives.

Everything downstream stores activations and weights as double-precision
NCHW / (C_out, C_in, H, W) arrays behind these two thin wrappers.  Wrapped
arrays are read-only so values can be shared freely between layers, caches,
and threads.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .errors import ShapeError

__all__ = ["Tensor4", "Kernel4", "rot180", "frobenius_inner", "l2_norm", "as_array"]


def _freeze4(values, kind: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, order="C")
    if arr.ndim != 4:
        raise ShapeError(f"{kind} needs 4 dims, got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ShapeError(f"{kind} dims must all be >= 1, got {arr.shape}")
    arr.flags.writeable = False
    return arr


class Tensor4:
    """Immutable (N, C, H, W) array of doubles."""

    __slots__ = ("_data",)

    def __init__(self, values):
        self._data = _freeze4(values, "Tensor4")

    @classmethod
    def from_flat(cls, dims: Sequence[int], flat: Sequence[float]) -> "Tensor4":
        dims = tuple(int(d) for d in dims)
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != math.prod(dims):
            raise ShapeError(f"flat data length {flat.size} != product of dims {dims}")
        return cls(flat.reshape(dims))

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return self._data.shape

    def __repr__(self) -> str:
        return f"Tensor4(dims={self.dims})"


class Kernel4:
    """Immutable (C_out, C_in, H, W) convolution weight array."""

    __slots__ = ("_data",)

    def __init__(self, values):
        self._data = _freeze4(values, "Kernel4")

    @classmethod
    def from_flat(cls, dims: Sequence[int], flat: Sequence[float]) -> "Kernel4":
        dims = tuple(int(d) for d in dims)
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != math.prod(dims):
            raise ShapeError(f"flat data length {flat.size} != product of dims {dims}")
        return cls(flat.reshape(dims))

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return self._data.shape

    def __repr__(self) -> str:
        return f"Kernel4(dims={self.dims})"


def as_array(obj) -> np.ndarray:
    """Unwrap Tensor4/Kernel4 or coerce an array-like to float64."""
    if isinstance(obj, (Tensor4, Kernel4)):
        return obj.data
    return np.asarray(obj, dtype=np.float64)


def rot180(k: Kernel4) -> Kernel4:
    """Reverse both spatial axes: out[co,ci,u,v] = in[co,ci,H-1-u,W-1-v]."""
    return Kernel4(k.data[:, :, ::-1, ::-1])


def frobenius_inner(a, b) -> float:
    """Sum of elementwise products of two equally-shaped arrays."""
    av, bv = as_array(a), as_array(b)
    if av.shape != bv.shape:
        raise ShapeError(f"frobenius_inner shapes differ: {av.shape} vs {bv.shape}")
    return float((av * bv).sum())


def l2_norm(t) -> float:
    """Square root of the sum of squared entries."""
    v = as_array(t)
    return float(np.sqrt((v * v).sum()))
