"""Frequency-domain verifier for the filtered-gradient error bound.

Holds the naive unnormalized 2D DFT, cyclic convolution, the spatial-domain
SNR measurement, the kernel DC-dominance ratio, and the single-patch
circular-convolution experiment showing that filtering the output gradient
does not degrade the input-gradient SNR when the kernel's DC bin dominates.

This module's circular semantics are deliberately separate from the
zero-padded linear convolution used by the training path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor import Kernel4, as_array

__all__ = [
    "Spectrum2",
    "SnrReport",
    "DcRatioReport",
    "Prop1Trial",
    "dft2",
    "circular_conv2",
    "measure_snr",
    "dc_energy_ratio",
    "verify_prop1",
    "working_grid_dc_ratio",
    "run_prop1_trials",
]

_SNR_EPS = 1e-15
_PROP1_TOL = 1e-9


class Spectrum2:
    """Complex bins of an unnormalized 2D DFT."""

    __slots__ = ("_values",)

    def __init__(self, values):
        arr = np.array(values, dtype=np.complex128, order="C")
        if arr.ndim != 2:
            raise ShapeError(f"Spectrum2 needs 2 dims, got shape {arr.shape}")
        arr.flags.writeable = False
        self._values = arr

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def dims(self) -> tuple[int, int]:
        return self._values.shape

    def __repr__(self) -> str:
        return f"Spectrum2(dims={self.dims})"


@dataclass(frozen=True)
class SnrReport:
    """SNRs of the filtered output gradient and the propagated input gradient."""

    snr_gy: float
    snr_gx: float
    holds: bool


@dataclass(frozen=True)
class DcRatioReport:
    """Per-channel-pair DC-to-peak-AC energy ratios and their minimum."""

    ratios: np.ndarray
    aggregate: float


@dataclass(frozen=True)
class Prop1Trial:
    """One randomized single-patch experiment."""

    index: int
    dc_ratio: float
    report: SnrReport


def dft2(map2d) -> Spectrum2:
    """Unnormalized DFT, evaluated naively (no FFT): F[u,v] = sum over (h,w)
    of f[h,w] * exp(-2*pi*i*(u*h/H + v*w/W))."""
    f = np.asarray(map2d, dtype=np.float64)
    if f.ndim != 2:
        raise ShapeError(f"dft2 expects a 2D map, got shape {f.shape}")
    h, w = f.shape
    row_phase = np.exp(-2j * np.pi * np.outer(np.arange(h), np.arange(h)) / h)
    col_phase = np.exp(-2j * np.pi * np.outer(np.arange(w), np.arange(w)) / w)
    # optimize=False keeps the full (u,h,w,v) loop nest: the naive transform
    values = np.einsum("uh,hw,vw->uv", row_phase, f, col_phase, optimize=False)
    return Spectrum2(values)


def circular_conv2(a, b) -> np.ndarray:
    """Cyclic convolution of a with b, b zero-extended to a's dims."""
    av = np.asarray(a, dtype=np.float64)
    bv = np.asarray(b, dtype=np.float64)
    if av.ndim != 2 or bv.ndim != 2:
        raise ShapeError("circular_conv2 expects 2D maps")
    if bv.shape[0] > av.shape[0] or bv.shape[1] > av.shape[1]:
        raise ShapeError(f"second map {bv.shape} exceeds first map {av.shape}")
    out = np.zeros_like(av)
    for i in range(bv.shape[0]):
        for j in range(bv.shape[1]):
            if bv[i, j] != 0.0:
                out += bv[i, j] * np.roll(av, (i, j), axis=(0, 1))
    return out


def measure_snr(reference, approx) -> float:
    """Signal-to-noise ratio ||ref||^2 / ||ref - approx||^2 in the spatial
    domain, with +inf once the error norm drops below 1e-15 * ||ref||."""
    ref = as_array(reference)
    app = as_array(approx)
    if ref.shape != app.shape:
        raise ShapeError(f"snr shapes differ: {ref.shape} vs {app.shape}")
    ref_norm = float(np.sqrt((ref * ref).sum()))
    err = ref - app
    err_norm = float(np.sqrt((err * err).sum()))
    if err_norm <= _SNR_EPS * ref_norm:
        return math.inf
    return ref_norm**2 / err_norm**2


def _pair_ratio(power: np.ndarray) -> float:
    total = float(power.sum())
    ac = power.copy()
    ac.flat[0] = 0.0
    ac_max = float(ac.max()) if ac.size else 0.0
    if ac_max <= _SNR_EPS * total:
        return math.inf
    return float(power[0, 0]) / ac_max


def dc_energy_ratio(theta: Kernel4) -> DcRatioReport:
    """DC-bin energy over the strongest AC bin, per channel pair, on the
    kernel's own H x W transform."""
    c_out, c_in = theta.dims[0], theta.dims[1]
    ratios = np.empty((c_out, c_in))
    for co in range(c_out):
        for ci in range(c_in):
            power = np.abs(dft2(theta.data[co, ci]).values) ** 2
            ratios[co, ci] = _pair_ratio(power)
    ratios.flags.writeable = False
    return DcRatioReport(ratios=ratios, aggregate=float(ratios.min()))


def working_grid_dc_ratio(kernel2d, r: int) -> float:
    """DC-dominance ratio of a kernel zero-extended to the r x r grid the
    single-patch experiment works on.  This is the spectrum that actually
    multiplies the gradient bins, so it is the quantity that gates the bound."""
    k = np.asarray(kernel2d, dtype=np.float64)
    if k.ndim != 2:
        raise ShapeError(f"expected a 2D kernel slice, got shape {k.shape}")
    if k.shape[0] > r or k.shape[1] > r:
        raise ShapeError(f"kernel {k.shape} does not fit an {r}x{r} patch")
    ext = np.zeros((r, r))
    ext[: k.shape[0], : k.shape[1]] = k
    power = np.abs(dft2(ext).values) ** 2
    return _pair_ratio(power)


def verify_prop1(theta: Kernel4, g_y) -> SnrReport:
    """Single-patch experiment under circular-convolution semantics.

    g_y must be a square r x r map (one whole patch).  The filtered gradient
    is the patch mean expanded; both gradients are propagated by cyclic
    convolution with the rotated kernel, and the report states whether
    snr_gx >= snr_gy - 1e-9.
    """
    if theta.dims[0] != 1 or theta.dims[1] != 1:
        raise ShapeError(f"single channel pair required, kernel has dims {theta.dims}")
    g = np.asarray(g_y, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ShapeError(f"g_y must be a square single patch, got shape {g.shape}")
    r = g.shape[0]
    kern = theta.data[0, 0]
    if kern.shape[0] > r or kern.shape[1] > r:
        raise ShapeError(f"kernel {kern.shape} does not fit an {r}x{r} patch")
    rotated = kern[::-1, ::-1]
    g_filt = np.full_like(g, g.mean())
    g_x = circular_conv2(g, rotated)
    g_x_filt = circular_conv2(g_filt, rotated)
    snr_gy = measure_snr(g, g_filt)
    snr_gx = measure_snr(g_x, g_x_filt)
    return SnrReport(snr_gy=snr_gy, snr_gx=snr_gx, holds=snr_gx >= snr_gy - _PROP1_TOL)


def run_prop1_trials(trials: int, r: int, kernel_size: int, seed: int) -> list[Prop1Trial]:
    """Seeded batch of single-patch experiments with DC dominance enforced.

    Each trial draws a Gaussian gradient patch and a Gaussian kernel, then
    raises the kernel's mean (adding a constant to all taps) until the
    working-grid ratio reaches 1; the all-ones kernel's extended spectrum is
    strictly DC-dominant, so the escalation always terminates.
    """
    rng = np.random.default_rng(seed)
    out = []
    for index in range(trials):
        g = rng.normal(size=(r, r))
        kern = rng.normal(size=(kernel_size, kernel_size))
        offset = 0.0
        while working_grid_dc_ratio(kern + offset, r) < 1.0:
            offset = 0.25 if offset == 0.0 else offset * 2.0
        kern = kern + offset
        ratio = working_grid_dc_ratio(kern, r)
        report = verify_prop1(Kernel4(kern[None, None]), g)
        out.append(Prop1Trial(index=index, dc_ratio=ratio, report=report))
    return out
