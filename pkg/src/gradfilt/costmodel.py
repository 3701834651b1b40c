"""Closed-form FLOP and memory accounting for convolution back-propagation.

Counts follow the 1-multiply-1-add convention: a dot product of length k
costs k multiplies and k-1 adds, so the dense backward-input pass over a
same-padded layer costs exactly 2 * C_x * C_y * H_y * W_y * Hk * Wk (padded
taps included, matching the instrumented reference loop).  The filtered
path collapses each r x r patch to one unique value, leaving a leading term
proportional to the patch-grid area plus three small preparation overheads
that are itemized so the total is exactly checkable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigError

__all__ = [
    "LayerCfg",
    "CostReport",
    "vanilla_bp_flops",
    "filtered_bp_flops",
    "min_flops",
    "memory_report",
    "sweep_curve",
]


@dataclass(frozen=True)
class LayerCfg:
    """Shape record for one convolution layer: channels in/out, output map,
    kernel extent, and input map.  Stride 1; padding is implied by the pair
    of spatial extents.
    """

    c_x: int
    c_y: int
    h_y: int
    w_y: int
    h_k: int
    w_k: int
    h_x: int
    w_x: int

    def __post_init__(self):
        for name in ("c_x", "c_y", "h_y", "w_y", "h_k", "w_k", "h_x", "w_x"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")


@dataclass(frozen=True)
class CostReport:
    """One filtered-backward cost estimate.

    flops is always leading_term plus the three itemized overheads.  The
    memory fields describe the saved-activation footprint for a single
    sample; scale by batch size for the full tensor.
    """

    flops: int
    leading_term: int
    overhead_terms: int
    overhead_kernel_sum: int
    overhead_gradient_filter: int
    overhead_input_patch_sum: int
    stored_activation_elements: int
    memory_saving_fraction: float
    fwd_overhead_ratio: float
    bwd_overhead_ratio: float

    def __post_init__(self):
        itemized = (
            self.overhead_kernel_sum
            + self.overhead_gradient_filter
            + self.overhead_input_patch_sum
        )
        if self.overhead_terms != itemized:
            raise ConfigError("overhead_terms must equal the sum of its items")
        if self.flops != self.leading_term + self.overhead_terms:
            raise ConfigError("flops must equal leading_term + overhead_terms")
        if not 0.0 <= self.memory_saving_fraction <= 1.0:
            raise ConfigError("memory_saving_fraction must lie in [0, 1]")


def vanilla_bp_flops(cfg: LayerCfg) -> int:
    """Dense backward-input cost: every output-gradient tap contributes one
    multiply and one accumulate for each of the Hk*Wk kernel positions.
    """
    return 2 * cfg.c_x * cfg.c_y * cfg.h_y * cfg.w_y * cfg.h_k * cfg.w_k


def _patch_grid_area(h: int, w: int, r: int) -> int:
    return math.ceil(h / r) * math.ceil(w / r)


def filtered_bp_flops(cfg: LayerCfg, r: int) -> CostReport:
    """Cost of the filtered backward pass at patch size r.

    The leading term covers the unique-grid channel contraction: for each of
    the ceil(H_y/r)*ceil(W_y/r) patches and each input channel, a dot
    product over C_y output channels (C_y multiplies, C_y - 1 adds).  The
    overheads are the spatial kernel sum, the patch-mean reduction of g_y,
    and the patch pre-sum of x that replaces the stored activation.
    """
    if not isinstance(r, int) or r < 1:
        raise ConfigError(f"patch size r must be a positive integer, got {r!r}")
    patches = _patch_grid_area(cfg.h_y, cfg.w_y, r)
    leading = patches * cfg.c_x * (2 * cfg.c_y - 1)
    kernel_sum = cfg.c_x * cfg.c_y * (cfg.h_k * cfg.w_k - 1)
    grad_filter = cfg.c_y * cfg.h_y * cfg.w_y + patches * cfg.c_y
    input_patch_sum = cfg.c_x * cfg.h_x * cfg.w_x
    overhead = kernel_sum + grad_filter + input_patch_sum
    stored = cfg.c_x * _patch_grid_area(cfg.h_x, cfg.w_x, r)
    dense = cfg.c_x * cfg.h_x * cfg.w_x
    return CostReport(
        flops=leading + overhead,
        leading_term=leading,
        overhead_terms=overhead,
        overhead_kernel_sum=kernel_sum,
        overhead_gradient_filter=grad_filter,
        overhead_input_patch_sum=input_patch_sum,
        stored_activation_elements=stored,
        memory_saving_fraction=1.0 - stored / dense,
        fwd_overhead_ratio=1.0 / (2 * cfg.c_y * cfg.h_k * cfg.w_k),
        bwd_overhead_ratio=(r * r - 1) / (2 * cfg.c_x),
    )


def min_flops(cfg: LayerCfg) -> int:
    """Floor of the filtered leading term: one patch covers the whole map,
    so only the channel contraction remains.
    """
    return 2 * cfg.c_x * cfg.c_y - cfg.c_x


def memory_report(cfg: LayerCfg, r: int, n: int) -> tuple[int, float]:
    """Stored activation elements and saving fraction for a batch of n.

    The filtered layer keeps one pre-summed value per r x r input patch in
    place of the full map, so the count is n * C_x * ceil(H_x/r) * ceil(W_x/r).
    """
    if not isinstance(r, int) or r < 1:
        raise ConfigError(f"patch size r must be a positive integer, got {r!r}")
    if not isinstance(n, int) or n < 1:
        raise ConfigError(f"batch size n must be a positive integer, got {n!r}")
    stored = n * cfg.c_x * _patch_grid_area(cfg.h_x, cfg.w_x, r)
    dense = n * cfg.c_x * cfg.h_x * cfg.w_x
    return stored, 1.0 - stored / dense


def sweep_curve(cfg: LayerCfg, r_values) -> list[tuple[int, CostReport]]:
    """Evaluate filtered_bp_flops across a list of patch sizes."""
    return [(r, filtered_bp_flops(cfg, r)) for r in r_values]
