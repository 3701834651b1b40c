"""Reference convolution layer math: forward pass and exact back-propagation.

The semantics are the direct nested-loop convolution with symmetric zero
padding and stride 1 (no im2col, no FFT), so the instrumented operation counts
below are well defined.  The heavy lifting runs on the selected kernel backend;
counted_backward_input re-executes the canonical loop in Python to tally every
scalar multiply.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .backend import kernels
from .errors import ConfigError, ShapeError
from .tensor import Kernel4, Tensor4

__all__ = [
    "ConvCfg",
    "OpCount",
    "conv2d_forward",
    "conv2d_backward_input",
    "conv2d_backward_kernel",
    "conv2d_backward_bias",
    "counted_backward_input",
]


@dataclass(frozen=True)
class ConvCfg:
    """Layer hyper-parameters: symmetric zero padding, stride pinned to 1."""

    padding: int = 0
    stride: int = 1

    def __post_init__(self):
        if self.stride != 1:
            raise ConfigError(f"stride must be 1, got {self.stride}")
        if self.padding < 0:
            raise ConfigError(f"padding must be >= 0, got {self.padding}")


@dataclass(frozen=True)
class OpCount:
    """Tally of scalar arithmetic executed by an instrumented loop.

    multiplies counts every product, including products with padded zeros
    (the dense count).  additions counts actual accumulator additions, i.e.
    terms - 1 per reduced output element.
    """

    multiplies: int
    additions: int

    def __post_init__(self):
        if self.multiplies < 0 or self.additions < 0:
            raise ValueError("operation counts must be non-negative")


def _out_dim(size: int, k: int, pad: int) -> int:
    return size + 2 * pad - k + 1


def conv2d_forward(x: Tensor4, theta: Kernel4, bias: Sequence[float], cfg: ConvCfg) -> Tensor4:
    """y[n,co,h,w] = bias[co] + sum over (ci,u,v) of x_padded * theta."""
    n, c_in, h, w = x.dims
    c_out, k_cin, kh, kw = theta.dims
    if k_cin != c_in:
        raise ShapeError(f"kernel expects {k_cin} input channels, tensor has {c_in}")
    bias_arr = np.ascontiguousarray(bias, dtype=np.float64)
    if bias_arr.shape != (c_out,):
        raise ShapeError(f"bias must have length {c_out}, got shape {bias_arr.shape}")
    if h + 2 * cfg.padding < kh or w + 2 * cfg.padding < kw:
        raise ShapeError(
            f"padded input {h + 2 * cfg.padding}x{w + 2 * cfg.padding} smaller than kernel {kh}x{kw}"
        )
    y = kernels.conv2d_forward(x.data, theta.data, bias_arr, cfg.padding)
    return Tensor4(y)


def conv2d_backward_input(g_y: Tensor4, theta: Kernel4, cfg: ConvCfg) -> Tensor4:
    """Gradient w.r.t. the layer input: full correlation of g_y with the
    rotated kernel, restricted to the original input extent."""
    n, c, hy, wy = g_y.dims
    c_out, c_in, kh, kw = theta.dims
    if c != c_out:
        raise ShapeError(f"g_y has {c} channels, kernel produces {c_out}")
    hx = hy - 2 * cfg.padding + kh - 1
    wx = wy - 2 * cfg.padding + kw - 1
    if hx < 1 or wx < 1:
        raise ShapeError(f"inconsistent dims: recovered input extent {hx}x{wx}")
    gx = kernels.conv2d_backward_input(g_y.data, theta.data, cfg.padding, hx, wx)
    return Tensor4(gx)


def conv2d_backward_kernel(g_y: Tensor4, x: Tensor4, cfg: ConvCfg) -> Kernel4:
    """Gradient w.r.t. the kernel: per-tap inner products of x windows with g_y."""
    n, c_out, hy, wy = g_y.dims
    nx, c_in, h, w = x.dims
    if n != nx:
        raise ShapeError(f"batch mismatch: g_y has {n}, x has {nx}")
    kh = h + 2 * cfg.padding - hy + 1
    kw = w + 2 * cfg.padding - wy + 1
    if kh < 1 or kw < 1:
        raise ShapeError(f"inconsistent dims: recovered kernel extent {kh}x{kw}")
    gk = kernels.conv2d_backward_kernel(g_y.data, x.data, cfg.padding, kh, kw)
    return Kernel4(gk)


def conv2d_backward_bias(g_y: Tensor4) -> np.ndarray:
    """Gradient w.r.t. the bias: per-channel sum of g_y."""
    gb = g_y.data.sum(axis=(0, 2, 3))
    gb.flags.writeable = False
    return gb


def counted_backward_input(g_y: Tensor4, theta: Kernel4, cfg: ConvCfg):
    """conv2d_backward_input executed as the canonical Python loop with an
    operation tally.

    Every tap position multiplies, including positions that fall on the
    zero-extended margin of g_y, so for stride-1 same-padding layers the
    multiply count per sample is C_in * C_out * H_y * W_y * H_k * W_k.
    Counts scale linearly with the batch dimension.  Slow by construction;
    meant for small instrumentation runs.
    """
    n_b, c, hy, wy = g_y.dims
    c_out, c_in, kh, kw = theta.dims
    if c != c_out:
        raise ShapeError(f"g_y has {c} channels, kernel produces {c_out}")
    pad = cfg.padding
    hx = hy - 2 * pad + kh - 1
    wx = wy - 2 * pad + kw - 1
    if hx < 1 or wx < 1:
        raise ShapeError(f"inconsistent dims: recovered input extent {hx}x{wx}")
    gy = g_y.data
    k = theta.data
    gx = np.zeros((n_b, c_in, hx, wx))
    multiplies = 0
    additions = 0
    for n in range(n_b):
        for ci in range(c_in):
            for h in range(hx):
                for w in range(wx):
                    acc = 0.0
                    terms = 0
                    for co in range(c_out):
                        for u in range(kh):
                            a = h + pad - u
                            for v in range(kw):
                                b = w + pad - v
                                if 0 <= a < hy and 0 <= b < wy:
                                    prod = k[co, ci, u, v] * gy[n, co, a, b]
                                else:
                                    prod = k[co, ci, u, v] * 0.0
                                multiplies += 1
                                if terms:
                                    acc += prod
                                    additions += 1
                                else:
                                    acc = prod
                                terms += 1
                    gx[n, ci, h, w] = acc
    return Tensor4(gx), OpCount(multiplies=multiplies, additions=additions)
