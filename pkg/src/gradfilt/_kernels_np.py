"""NumPy fallback for the hot convolution kernels.

Same signatures as the compiled gradfilt._kernels module: raw float64
C-contiguous arrays in, new arrays out.  Windows are built with stride tricks
and reduced with a fixed-order einsum so results are deterministic run to run.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _pad_hw(arr, pad):
    if pad == 0:
        return arr
    return np.pad(arr, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def conv2d_forward(x, k, bias, pad):
    kh, kw = k.shape[2], k.shape[3]
    xp = _pad_hw(x, pad)
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    y = np.einsum("nihwuv,oiuv->nohw", windows, k)
    return y + bias[None, :, None, None]


def conv2d_backward_input(gy, k, pad, hx, wx):
    n, co = gy.shape[0], gy.shape[1]
    hy, wy = gy.shape[2], gy.shape[3]
    kh, kw = k.shape[2], k.shape[3]
    # place gy inside a zero canvas so every valid shift is a plain window read
    ext = np.zeros((n, co, hx + kh - 1, wx + kw - 1))
    off_h, off_w = kh - 1 - pad, kw - 1 - pad
    dst_h, src_h = max(0, off_h), max(0, -off_h)
    dst_w, src_w = max(0, off_w), max(0, -off_w)
    n_h = min(hy - src_h, ext.shape[2] - dst_h)
    n_w = min(wy - src_w, ext.shape[3] - dst_w)
    if n_h > 0 and n_w > 0:
        ext[:, :, dst_h : dst_h + n_h, dst_w : dst_w + n_w] = gy[
            :, :, src_h : src_h + n_h, src_w : src_w + n_w
        ]
    windows = sliding_window_view(ext, (kh, kw), axis=(2, 3))
    rotated = k[:, :, ::-1, ::-1]
    return np.einsum("nohwuv,oiuv->nihw", windows, rotated)


def conv2d_backward_kernel(gy, x, pad, kh, kw):
    hy, wy = gy.shape[2], gy.shape[3]
    xp = _pad_hw(x, pad)
    windows = sliding_window_view(xp, (hy, wy), axis=(2, 3))
    return np.einsum("niuvhw,nohw->oiuv", windows, gy)
