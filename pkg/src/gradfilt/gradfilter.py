"""Patch-mean gradient filtering and the simplified convolution backward.

The filter replaces every r x r patch of an output-gradient map with the
patch mean, so a map is fully described by one unique value per patch (a
PatchGrid).  Under the patch-padding convention the backward-input pass
collapses to a per-channel-pair scalar (the spatial kernel sum) times the
patch value, and the backward-kernel pass to a single Frobenius product of
two patch grids, identical for every tap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .conv import OpCount
from .errors import ConfigError, ShapeError
from .tensor import Kernel4, Tensor4

__all__ = [
    "FilterCfg",
    "PatchGrid",
    "SpatialKernelSum",
    "filter_gradient",
    "expand",
    "spatial_sum_kernel",
    "patch_sum_input",
    "filtered_backward_input",
    "filtered_backward_kernel",
    "filtered_conv_bp",
    "counted_filtered_backward_input",
]

_PARTIAL_MODES = ("true_mean", "strict_r2")


@dataclass(frozen=True)
class FilterCfg:
    """Patch size r, plus the divisor convention for edge patches.

    true_mean (default) divides an edge patch by its actual element count;
    strict_r2 always divides by r*r.  Full patches divide by r*r either way.
    """

    r: int
    partial_patch_mode: str = "true_mean"

    def __post_init__(self):
        if self.r < 1:
            raise ConfigError(f"patch size r must be >= 1, got {self.r}")
        if self.partial_patch_mode not in _PARTIAL_MODES:
            raise ConfigError(
                f"partial_patch_mode must be one of {_PARTIAL_MODES}, got {self.partial_patch_mode!r}"
            )


class PatchGrid:
    """One value per r x r patch of an (N, C, H, W) map."""

    __slots__ = ("_values", "_origin", "_r")

    def __init__(self, values, origin_dims: tuple[int, int], r: int):
        arr = np.array(values, dtype=np.float64, order="C")
        if arr.ndim != 4:
            raise ShapeError(f"PatchGrid values need 4 dims, got shape {arr.shape}")
        h, w = int(origin_dims[0]), int(origin_dims[1])
        if r < 1:
            raise ConfigError(f"patch size r must be >= 1, got {r}")
        expected = (math.ceil(h / r), math.ceil(w / r))
        if arr.shape[2:] != expected:
            raise ShapeError(
                f"grid {arr.shape[2:]} does not tile a {h}x{w} map with r={r}, expected {expected}"
            )
        arr.flags.writeable = False
        self._values = arr
        self._origin = (h, w)
        self._r = int(r)

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return self._values.shape

    @property
    def origin_dims(self) -> tuple[int, int]:
        return self._origin

    @property
    def r(self) -> int:
        return self._r

    def __repr__(self) -> str:
        return f"PatchGrid(dims={self.dims}, origin={self._origin}, r={self._r})"


class SpatialKernelSum:
    """Per-(C_out, C_in) sum of all kernel taps."""

    __slots__ = ("_values",)

    def __init__(self, values):
        arr = np.array(values, dtype=np.float64, order="C")
        if arr.ndim != 2:
            raise ShapeError(f"SpatialKernelSum needs 2 dims, got shape {arr.shape}")
        arr.flags.writeable = False
        self._values = arr

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def dims(self) -> tuple[int, int]:
        return self._values.shape

    def __repr__(self) -> str:
        return f"SpatialKernelSum(dims={self.dims})"


def _patch_sums(arr: np.ndarray, r: int) -> np.ndarray:
    h, w = arr.shape[2], arr.shape[3]
    rows = np.arange(0, h, r)
    cols = np.arange(0, w, r)
    return np.add.reduceat(np.add.reduceat(arr, rows, axis=2), cols, axis=3)


def _patch_counts(h: int, w: int, r: int) -> np.ndarray:
    row_counts = np.minimum(r, h - np.arange(0, h, r))
    col_counts = np.minimum(r, w - np.arange(0, w, r))
    return np.outer(row_counts, col_counts).astype(np.float64)


def filter_gradient(g_y: Tensor4, cfg: FilterCfg) -> PatchGrid:
    """Per-patch means of g_y; the unique-value grid of the filtered map."""
    h, w = g_y.dims[2], g_y.dims[3]
    sums = _patch_sums(g_y.data, cfg.r)
    if cfg.partial_patch_mode == "true_mean":
        divisor = _patch_counts(h, w, cfg.r)
    else:
        divisor = float(cfg.r * cfg.r)
    return PatchGrid(sums / divisor, origin_dims=(h, w), r=cfg.r)


def expand(p: PatchGrid) -> Tensor4:
    """Replicate each patch value back to a full H x W block-constant map."""
    h, w = p.origin_dims
    out = np.repeat(np.repeat(p.values, p.r, axis=2), p.r, axis=3)
    return Tensor4(out[:, :, :h, :w])


def spatial_sum_kernel(theta: Kernel4) -> SpatialKernelSum:
    """Sum of all taps per channel pair (rotation-invariant)."""
    return SpatialKernelSum(theta.data.sum(axis=(2, 3)))


def patch_sum_input(x: Tensor4, cfg: FilterCfg) -> PatchGrid:
    """Per-patch sums of the activation, never divided."""
    h, w = x.dims[2], x.dims[3]
    return PatchGrid(_patch_sums(x.data, cfg.r), origin_dims=(h, w), r=cfg.r)


def _check_input_grids(g_u: PatchGrid, out_dims) -> tuple[int, int, int, int]:
    n, c_in, h, w = (int(d) for d in out_dims)
    if g_u.dims[0] != n:
        raise ShapeError(f"grid batch {g_u.dims[0]} != requested batch {n}")
    expected = (math.ceil(h / g_u.r), math.ceil(w / g_u.r))
    if g_u.dims[2:] != expected:
        raise ShapeError(
            f"grid {g_u.dims[2:]} does not tile a {h}x{w} output with r={g_u.r}"
        )
    return n, c_in, h, w


def filtered_backward_input(g_u: PatchGrid, theta_sum: SpatialKernelSum, out_dims) -> Tensor4:
    """g_x[n,ci,h,w] = sum over co of theta_sum[co,ci] * g_u[n,co,h//r,w//r]."""
    n, c_in, h, w = _check_input_grids(g_u, out_dims)
    c_out = g_u.dims[1]
    if theta_sum.dims != (c_out, c_in):
        raise ShapeError(
            f"kernel sum dims {theta_sum.dims} incompatible with {c_out} -> {c_in} channels"
        )
    grid = np.einsum("nopq,oi->nipq", g_u.values, theta_sum.values)
    return expand(PatchGrid(grid, origin_dims=(h, w), r=g_u.r))


def filtered_backward_kernel(g_u: PatchGrid, x_u: PatchGrid, kernel_dims) -> Kernel4:
    """One product per patch, summed over batch and patches; every tap of the
    returned kernel gradient carries the same value."""
    c_out, c_in, kh, kw = (int(d) for d in kernel_dims)
    if g_u.r != x_u.r or g_u.dims[0] != x_u.dims[0] or g_u.dims[2:] != x_u.dims[2:]:
        raise ShapeError(
            f"patch grids disagree: {g_u.dims} r={g_u.r} vs {x_u.dims} r={x_u.r}"
        )
    if g_u.dims[1] != c_out or x_u.dims[1] != c_in:
        raise ShapeError(
            f"grids carry {g_u.dims[1]} out / {x_u.dims[1]} in channels, kernel wants {c_out}/{c_in}"
        )
    pair = np.einsum("nipq,nopq->oi", x_u.values, g_u.values)
    return Kernel4(np.broadcast_to(pair[:, :, None, None], (c_out, c_in, kh, kw)))


def filtered_conv_bp(x: Tensor4, theta: Kernel4, g_y: Tensor4, cfg: FilterCfg):
    """Full filtered backward pass for one stride-1 convolution layer.

    Returns (g_x, g_theta, g_bias).  The input and output maps must share the
    spatial grid (same-padding layers), since the approximation pairs each
    activation patch with the output-gradient patch at the same location.
    The bias gradient is the exact sum of the filtered gradient map.
    """
    if x.dims[0] != g_y.dims[0]:
        raise ShapeError(f"batch mismatch: x has {x.dims[0]}, g_y has {g_y.dims[0]}")
    if x.dims[2:] != g_y.dims[2:]:
        raise ShapeError(
            f"filtered BP needs matching spatial grids, got {x.dims[2:]} vs {g_y.dims[2:]}"
        )
    c_out, c_in = theta.dims[0], theta.dims[1]
    if x.dims[1] != c_in or g_y.dims[1] != c_out:
        raise ShapeError(
            f"channel mismatch: x {x.dims[1]} / g_y {g_y.dims[1]} vs kernel {c_in}->{c_out}"
        )
    g_u = filter_gradient(g_y, cfg)
    x_u = patch_sum_input(x, cfg)
    g_x = filtered_backward_input(g_u, spatial_sum_kernel(theta), x.dims)
    g_theta = filtered_backward_kernel(g_u, x_u, theta.dims)
    g_bias = expand(g_u).data.sum(axis=(0, 2, 3))
    g_bias.flags.writeable = False
    return g_x, g_theta, g_bias


def counted_filtered_backward_input(g_u: PatchGrid, theta_sum: SpatialKernelSum, out_dims):
    """filtered_backward_input as an instrumented Python loop over the unique
    grid.  Multiplies per sample: C_in * C_out * ceil(H/r) * ceil(W/r), the
    multiply share of the filtered leading cost term.  Expansion back to the
    full map is replication and performs no arithmetic.
    """
    n, c_in, h, w = _check_input_grids(g_u, out_dims)
    c_out = g_u.dims[1]
    if theta_sum.dims != (c_out, c_in):
        raise ShapeError(
            f"kernel sum dims {theta_sum.dims} incompatible with {c_out} -> {c_in} channels"
        )
    ph, pw = g_u.dims[2], g_u.dims[3]
    grid = np.zeros((n, c_in, ph, pw))
    ts = theta_sum.values
    gu = g_u.values
    multiplies = 0
    additions = 0
    for b in range(n):
        for ci in range(c_in):
            for pi in range(ph):
                for pj in range(pw):
                    acc = 0.0
                    for co in range(c_out):
                        prod = ts[co, ci] * gu[b, co, pi, pj]
                        multiplies += 1
                        if co:
                            acc += prod
                            additions += 1
                        else:
                            acc = prod
                    grid[b, ci, pi, pj] = acc
    out = expand(PatchGrid(grid, origin_dims=(h, w), r=g_u.r))
    return out, OpCount(multiplies=multiplies, additions=additions)
