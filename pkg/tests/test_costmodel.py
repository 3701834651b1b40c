"""Analytic FLOP and memory model, cross-checked against the counted loops."""

import math

import numpy as np
import pytest

from gradfilt.conv import ConvCfg, counted_backward_input
from gradfilt.costmodel import (
    CostReport,
    LayerCfg,
    filtered_bp_flops,
    memory_report,
    min_flops,
    sweep_curve,
    vanilla_bp_flops,
)
from gradfilt.errors import ConfigError
from gradfilt.gradfilter import (
    FilterCfg,
    counted_filtered_backward_input,
    filter_gradient,
    spatial_sum_kernel,
)
from gradfilt.tensor import Kernel4, Tensor4

# the segmentation-head layer used for the headline numbers: 120x160 maps,
# 192 input channels, 64 output channels, 3x3 kernel, same padding
HEAD = LayerCfg(c_x=192, c_y=64, h_y=120, w_y=160, h_k=3, w_k=3, h_x=120, w_x=160)


def test_layer_cfg_validates():
    with pytest.raises(ConfigError):
        LayerCfg(c_x=0, c_y=1, h_y=1, w_y=1, h_k=1, w_k=1, h_x=1, w_x=1)


def test_vanilla_flops_head_layer():
    assert vanilla_bp_flops(HEAD) == 4_246_732_800


def test_vanilla_flops_unit_layer():
    unit = LayerCfg(c_x=1, c_y=1, h_y=1, w_y=1, h_k=1, w_k=1, h_x=1, w_x=1)
    assert vanilla_bp_flops(unit) == 2


def test_vanilla_flops_is_twice_counted_multiplies():
    cfg = LayerCfg(c_x=2, c_y=3, h_y=4, w_y=4, h_k=3, w_k=3, h_x=4, w_x=4)
    assert vanilla_bp_flops(cfg) == 1728
    rng = np.random.default_rng(3)
    gy = Tensor4(rng.normal(size=(1, 3, 4, 4)))
    k = Kernel4(rng.normal(size=(3, 2, 3, 3)))
    _, count = counted_backward_input(gy, k, ConvCfg(padding=1))
    assert vanilla_bp_flops(cfg) == 2 * count.multiplies


def test_filtered_flops_head_layer_r4():
    report = filtered_bp_flops(HEAD, 4)
    assert report.leading_term == 29_260_800  # 30*40*192*127
    assert report.fwd_overhead_ratio == pytest.approx(1 / 1152)
    assert report.bwd_overhead_ratio == pytest.approx(15 / 384)
    assert report.flops == report.leading_term + report.overhead_terms


def test_filtered_flops_overhead_itemization():
    report = filtered_bp_flops(HEAD, 4)
    patches = 30 * 40
    assert report.overhead_kernel_sum == 192 * 64 * 8
    assert report.overhead_gradient_filter == 64 * 120 * 160 + patches * 64
    assert report.overhead_input_patch_sum == 192 * 120 * 160
    assert report.overhead_terms == (
        report.overhead_kernel_sum
        + report.overhead_gradient_filter
        + report.overhead_input_patch_sum
    )


def test_filtered_flops_r1_1x1_formula():
    cfg = LayerCfg(c_x=2, c_y=3, h_y=4, w_y=5, h_k=1, w_k=1, h_x=4, w_x=5)
    report = filtered_bp_flops(cfg, 1)
    assert report.leading_term == 4 * 5 * 2 * (2 * 3 - 1)


def test_filtered_flops_rejects_bad_r():
    with pytest.raises(ConfigError):
        filtered_bp_flops(HEAD, 0)


def test_min_flops_values():
    assert min_flops(HEAD) == 24_384
    unit = LayerCfg(c_x=1, c_y=1, h_y=1, w_y=1, h_k=1, w_k=1, h_x=1, w_x=1)
    assert min_flops(unit) == 1
    # whole-map patch: ceilings collapse to 1 and the leading term bottoms out
    r_cover = max(HEAD.h_y, HEAD.w_y)
    assert filtered_bp_flops(HEAD, r_cover).leading_term == min_flops(HEAD)


def test_memory_report_divisible():
    stored, saving = memory_report(HEAD, 4, n=1)
    assert stored == 192 * 30 * 40
    cfg16 = LayerCfg(c_x=1, c_y=1, h_y=16, w_y=16, h_k=3, w_k=3, h_x=16, w_x=16)
    stored16, saving16 = memory_report(cfg16, 4, n=1)
    assert stored16 == 16
    assert saving16 == 0.9375  # exactly 1 - 1/r^2


def test_memory_report_r1_and_ceiling():
    cfg5 = LayerCfg(c_x=1, c_y=1, h_y=5, w_y=5, h_k=3, w_k=3, h_x=5, w_x=5)
    assert memory_report(cfg5, 1, n=1) == (25, 0.0)
    stored, saving = memory_report(cfg5, 2, n=1)
    assert stored == 9
    assert saving == pytest.approx(16 / 25)


def test_memory_report_scales_with_batch():
    stored, saving = memory_report(HEAD, 4, n=8)
    assert stored == 8 * 192 * 30 * 40
    assert saving == memory_report(HEAD, 4, n=1)[1]


def test_sweep_monotone_and_asymptote():
    rs = [1, 2, 4, 8, 20, 40, 120, 160]
    curve = sweep_curve(HEAD, rs)
    leads = [rep.leading_term for _, rep in curve]
    assert leads == sorted(leads, reverse=True)
    assert curve[-1][1].leading_term == min_flops(HEAD)
    # between divisible patch sizes the leading term scales like 1/r^2
    by_r = dict(curve)
    assert by_r[1].leading_term == 4 * by_r[2].leading_term
    assert by_r[2].leading_term == 4 * by_r[4].leading_term


def test_sweep_block4_resnet_layer():
    cfg = LayerCfg(c_x=512, c_y=512, h_y=7, w_y=7, h_k=3, w_k=3, h_x=7, w_x=7)
    curve = dict(sweep_curve(cfg, [7]))
    assert curve[7].leading_term == 523_776  # 1*1*512*1023


def test_report_invariant_random_cfgs():
    rng = np.random.default_rng(7)
    for _ in range(20):
        cfg = LayerCfg(
            c_x=int(rng.integers(1, 6)),
            c_y=int(rng.integers(1, 6)),
            h_y=int(rng.integers(1, 9)),
            w_y=int(rng.integers(1, 9)),
            h_k=int(rng.integers(1, 4)),
            w_k=int(rng.integers(1, 4)),
            h_x=int(rng.integers(1, 9)),
            w_x=int(rng.integers(1, 9)),
        )
        r = int(rng.integers(1, 5))
        report = filtered_bp_flops(cfg, r)
        assert isinstance(report, CostReport)
        assert report.flops == report.leading_term + report.overhead_terms
        assert report.leading_term >= min_flops(cfg)


def test_counted_vanilla_matches_formula_on_random_same_padding_cfgs():
    rng = np.random.default_rng(11)
    for _ in range(20):
        c_x, c_y = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        k = int(rng.choice([1, 3]))
        h = int(rng.integers(k, 7))
        w = int(rng.integers(k, 7))
        cfg = LayerCfg(c_x=c_x, c_y=c_y, h_y=h, w_y=w, h_k=k, w_k=k, h_x=h, w_x=w)
        gy = Tensor4(rng.normal(size=(1, c_y, h, w)))
        kern = Kernel4(rng.normal(size=(c_y, c_x, k, k)))
        _, count = counted_backward_input(gy, kern, ConvCfg(padding=(k - 1) // 2))
        assert 2 * count.multiplies == vanilla_bp_flops(cfg)


def test_counted_filtered_matches_leading_multiply_share():
    rng = np.random.default_rng(13)
    for _ in range(10):
        c_x, c_y = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        h, w = int(rng.integers(2, 8)), int(rng.integers(2, 8))
        r = int(rng.integers(1, 4))
        cfg = LayerCfg(c_x=c_x, c_y=c_y, h_y=h, w_y=w, h_k=3, w_k=3, h_x=h, w_x=w)
        grid = filter_gradient(Tensor4(rng.normal(size=(1, c_y, h, w))), FilterCfg(r=r))
        theta_sum = spatial_sum_kernel(Kernel4(rng.normal(size=(c_y, c_x, 3, 3))))
        _, count = counted_filtered_backward_input(grid, theta_sum, (1, c_x, h, w))
        patches = math.ceil(h / r) * math.ceil(w / r)
        # leading term = patches*c_x*(2*c_y-1): c_y multiplies + (c_y-1) adds per cell
        assert count.multiplies == patches * c_x * c_y
        assert count.additions == patches * c_x * (c_y - 1)
        report = filtered_bp_flops(cfg, r)
        assert report.leading_term == patches * c_x * (2 * c_y - 1)
