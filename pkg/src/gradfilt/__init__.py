"""Gradient-filtered back-propagation for convolution layers.

Exact reference convolution BP, the patch-mean gradient filter with its
simplified backward passes, an analytic FLOP/memory cost model, a spectral
SNR verifier, and a small deterministic training harness.
"""

from .backend import backend_name
from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from .conv import (
    ConvCfg,
    OpCount,
    conv2d_backward_bias,
    conv2d_backward_input,
    conv2d_backward_kernel,
    conv2d_forward,
    counted_backward_input,
)
from .costmodel import (
    CostReport,
    LayerCfg,
    filtered_bp_flops,
    memory_report,
    min_flops,
    sweep_curve,
    vanilla_bp_flops,
)
from .data import (
    Dataset,
    SplitSpec,
    load_idx,
    noniid_split,
    read_idx_raw,
    split_indices,
    synth_dataset,
    synth_raw,
    write_idx,
)
from .errors import ConfigError, FormatError, ShapeError
from .gradfilter import (
    FilterCfg,
    PatchGrid,
    SpatialKernelSum,
    counted_filtered_backward_input,
    expand,
    filter_gradient,
    filtered_backward_input,
    filtered_backward_kernel,
    filtered_conv_bp,
    patch_sum_input,
    spatial_sum_kernel,
)
from .nn import (
    AvgPool2,
    Conv2D,
    Flatten,
    Linear,
    Model,
    ReLU,
    build_desk_model,
    set_active_layers,
)
from .spectral import (
    DcRatioReport,
    Prop1Trial,
    SnrReport,
    Spectrum2,
    circular_conv2,
    dc_energy_ratio,
    dft2,
    measure_snr,
    run_prop1_trials,
    verify_prop1,
    working_grid_dc_ratio,
)
from .tensor import Kernel4, Tensor4, frobenius_inner, l2_norm, rot180
from .training import (
    EpochRow,
    TrainCfg,
    TrainMetrics,
    clip_grad_l2,
    cosine_lr,
    cross_entropy,
    evaluate,
    sgd_step,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "backend_name",
    "ConfigError",
    "FormatError",
    "ShapeError",
    "Tensor4",
    "Kernel4",
    "rot180",
    "frobenius_inner",
    "l2_norm",
    "ConvCfg",
    "OpCount",
    "conv2d_forward",
    "conv2d_backward_input",
    "conv2d_backward_kernel",
    "conv2d_backward_bias",
    "counted_backward_input",
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
    "Spectrum2",
    "SnrReport",
    "DcRatioReport",
    "Prop1Trial",
    "dft2",
    "circular_conv2",
    "measure_snr",
    "dc_energy_ratio",
    "working_grid_dc_ratio",
    "verify_prop1",
    "run_prop1_trials",
    "LayerCfg",
    "CostReport",
    "vanilla_bp_flops",
    "filtered_bp_flops",
    "min_flops",
    "memory_report",
    "sweep_curve",
    "Dataset",
    "SplitSpec",
    "read_idx_raw",
    "write_idx",
    "load_idx",
    "synth_raw",
    "synth_dataset",
    "split_indices",
    "noniid_split",
    "Conv2D",
    "ReLU",
    "AvgPool2",
    "Flatten",
    "Linear",
    "Model",
    "build_desk_model",
    "set_active_layers",
    "TrainCfg",
    "EpochRow",
    "TrainMetrics",
    "cross_entropy",
    "cosine_lr",
    "clip_grad_l2",
    "sgd_step",
    "evaluate",
    "train",
    "save_checkpoint",
    "read_checkpoint",
    "load_checkpoint",
]
