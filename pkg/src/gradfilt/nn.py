"""Sequential CNN layers with pluggable backward modes for convolutions.

A Model is an ordered list of layers passing plain float64 arrays forward.
Each Conv2D runs in one of three modes: "frozen" (no kernel update, exact
gradient pass-through), "vanilla" (exact backward, caches its full input),
or "filtered" (patch-mean backward, caches only the per-patch input sums).
The mode decides both the arithmetic and what the layer is allowed to keep
for the backward pass, so the memory claim is enforced by construction.
"""

from __future__ import annotations

import math

import numpy as np

from .conv import (
    ConvCfg,
    conv2d_backward_bias,
    conv2d_backward_input,
    conv2d_backward_kernel,
    conv2d_forward,
)
from .costmodel import LayerCfg, filtered_bp_flops, vanilla_bp_flops
from .errors import ConfigError, ShapeError
from .gradfilter import (
    FilterCfg,
    expand,
    filter_gradient,
    filtered_backward_input,
    filtered_backward_kernel,
    patch_sum_input,
    spatial_sum_kernel,
)
from .tensor import Kernel4, Tensor4

__all__ = [
    "Conv2D",
    "ReLU",
    "AvgPool2",
    "Flatten",
    "Linear",
    "Model",
    "build_desk_model",
    "set_active_layers",
]

_CONV_MODES = ("frozen", "vanilla", "filtered")


class Conv2D:
    """Stride-1 convolution with a switchable backward mode."""

    def __init__(self, kernel, bias, cfg: ConvCfg):
        self.kernel = np.array(kernel, dtype=np.float64)
        self.bias = np.array(bias, dtype=np.float64)
        if self.kernel.ndim != 4:
            raise ShapeError(f"conv kernel needs 4 dims, got shape {self.kernel.shape}")
        if self.bias.shape != (self.kernel.shape[0],):
            raise ShapeError(
                f"bias shape {self.bias.shape} does not match {self.kernel.shape[0]} filters"
            )
        self.cfg = cfg
        self.mode = "vanilla"
        self.filter_cfg: FilterCfg | None = None
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None
        self._shapes = None  # ((n, c_in, h_x, w_x), (h_y, w_y)) from the last forward

    @classmethod
    def init(cls, rng: np.random.Generator, c_in: int, c_out: int, k: int, padding: int):
        """Fan-in-scaled uniform kernel, zero bias."""
        bound = math.sqrt(6.0 / (c_in * k * k))
        kernel = rng.uniform(-bound, bound, size=(c_out, c_in, k, k))
        return cls(kernel, np.zeros(c_out), ConvCfg(padding=padding))

    def set_mode(self, mode: str, r: int | None = None) -> None:
        if mode not in _CONV_MODES:
            raise ConfigError(f"conv mode must be one of {_CONV_MODES}, got {mode!r}")
        if mode == "filtered":
            self.filter_cfg = FilterCfg(r=r if r is not None else 1)
        else:
            self.filter_cfg = None
        self.mode = mode
        self._cache = None

    @property
    def trainable(self) -> bool:
        return self.mode != "frozen"

    def params(self) -> dict[str, np.ndarray]:
        return {"kernel": self.kernel, "bias": self.bias}

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        xt = Tensor4(x)
        y = conv2d_forward(xt, Kernel4(self.kernel), self.bias, self.cfg)
        if train:
            self._shapes = (xt.dims, y.dims[2:])
            if self.mode == "filtered":
                if xt.dims[2:] != y.dims[2:]:
                    raise ConfigError(
                        "filtered mode needs matching input/output maps "
                        f"(same padding), got {xt.dims[2:]} vs {y.dims[2:]}"
                    )
                self._cache = patch_sum_input(xt, self.filter_cfg)
            elif self.mode == "vanilla":
                self._cache = xt
            else:
                self._cache = None
        return y.data

    def backward(self, g_y: np.ndarray, need_input_grad: bool) -> np.ndarray | None:
        gy = Tensor4(g_y)
        g_in = None
        if self.mode == "filtered":
            g_u = filter_gradient(gy, self.filter_cfg)
            g_kernel = filtered_backward_kernel(g_u, self._cache, self.kernel.shape)
            g_bias = expand(g_u).data.sum(axis=(0, 2, 3))
            self.grads = {"kernel": np.array(g_kernel.data), "bias": g_bias}
            if need_input_grad:
                theta_sum = spatial_sum_kernel(Kernel4(self.kernel))
                g_in = filtered_backward_input(g_u, theta_sum, self._shapes[0]).data
        else:
            if self.mode == "vanilla":
                g_kernel = conv2d_backward_kernel(gy, self._cache, self.cfg)
                self.grads = {
                    "kernel": np.array(g_kernel.data),
                    "bias": np.array(conv2d_backward_bias(gy)),
                }
            if need_input_grad:
                g_in = conv2d_backward_input(gy, Kernel4(self.kernel), self.cfg).data
        self._cache = None
        return g_in

    def stored_elements(self) -> int:
        """Activation elements currently cached for the kernel gradient."""
        if self._cache is None:
            return 0
        if self.mode == "filtered":
            return self._cache.values.size
        return self._cache.data.size

    def layer_cfg(self) -> LayerCfg:
        if self._shapes is None:
            raise ConfigError("layer shapes unknown before the first training forward")
        (_, c_in, h_x, w_x), (h_y, w_y) = self._shapes
        c_out, _, kh, kw = self.kernel.shape
        return LayerCfg(
            c_x=c_in, c_y=c_out, h_y=h_y, w_y=w_y, h_k=kh, w_k=kw, h_x=h_x, w_x=w_x
        )

    def bp_flops_per_sample(self) -> int:
        """Analytic backward cost of this layer in its current mode."""
        if self.mode == "filtered":
            return filtered_bp_flops(self.layer_cfg(), self.filter_cfg.r).flops
        return vanilla_bp_flops(self.layer_cfg())


class ReLU:
    trainable = False

    def __init__(self):
        self._mask = None
        self.grads: dict[str, np.ndarray] = {}

    def params(self) -> dict[str, np.ndarray]:
        return {}

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        if train:
            self._mask = x > 0
        return np.maximum(x, 0.0)

    def backward(self, g_y: np.ndarray, need_input_grad: bool) -> np.ndarray | None:
        mask, self._mask = self._mask, None
        return g_y * mask if need_input_grad else None


class AvgPool2:
    """2x2 average pooling with stride 2; trailing odd rows/columns drop."""

    trainable = False

    def __init__(self):
        self._in_shape = None
        self.grads: dict[str, np.ndarray] = {}

    def params(self) -> dict[str, np.ndarray]:
        return {}

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        n, c, h, w = x.shape
        h2, w2 = h // 2, w // 2
        if train:
            self._in_shape = x.shape
        trimmed = x[:, :, : h2 * 2, : w2 * 2]
        return trimmed.reshape(n, c, h2, 2, w2, 2).mean(axis=(3, 5))

    def backward(self, g_y: np.ndarray, need_input_grad: bool) -> np.ndarray | None:
        shape, self._in_shape = self._in_shape, None
        if not need_input_grad:
            return None
        n, c, h, w = shape
        spread = np.repeat(np.repeat(g_y, 2, axis=2), 2, axis=3) / 4.0
        g_in = np.zeros(shape)
        g_in[:, :, : spread.shape[2], : spread.shape[3]] = spread
        return g_in


class Flatten:
    trainable = False

    def __init__(self):
        self._in_shape = None
        self.grads: dict[str, np.ndarray] = {}

    def params(self) -> dict[str, np.ndarray]:
        return {}

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        if train:
            self._in_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, g_y: np.ndarray, need_input_grad: bool) -> np.ndarray | None:
        shape, self._in_shape = self._in_shape, None
        return g_y.reshape(shape) if need_input_grad else None


class Linear:
    """Dense classifier head: logits = x @ weights.T + bias."""

    trainable = True

    def __init__(self, weights, bias):
        self.weights = np.array(weights, dtype=np.float64)
        self.bias = np.array(bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"linear wants (K, D) weights and (K,) bias, got "
                f"{self.weights.shape} and {self.bias.shape}"
            )
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, d_out: int):
        bound = math.sqrt(6.0 / d_in)
        return cls(rng.uniform(-bound, bound, size=(d_out, d_in)), np.zeros(d_out))

    def params(self) -> dict[str, np.ndarray]:
        return {"weights": self.weights, "bias": self.bias}

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        if x.shape[1] != self.weights.shape[1]:
            raise ShapeError(
                f"linear expects {self.weights.shape[1]} features, got {x.shape[1]}"
            )
        if train:
            self._cache = x
        return x @ self.weights.T + self.bias

    def backward(self, g_y: np.ndarray, need_input_grad: bool) -> np.ndarray | None:
        x, self._cache = self._cache, None
        self.grads = {"weights": g_y.T @ x, "bias": g_y.sum(axis=0)}
        return g_y @ self.weights if need_input_grad else None


class Model:
    """An ordered stack of layers ending in the classifier."""

    def __init__(self, layers):
        self.layers = list(layers)

    @property
    def conv_layers(self) -> list[Conv2D]:
        return [layer for layer in self.layers if isinstance(layer, Conv2D)]

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        out = np.asarray(x, dtype=np.float64)
        for layer in self.layers:
            out = layer.forward(out, train)
        return out

    def backward_start(self) -> int | None:
        """Index of the earliest layer whose parameters receive updates; the
        backward pass only needs to reach this layer."""
        for i, layer in enumerate(self.layers):
            if layer.trainable and layer.params():
                return i
        return None

    def backward(self, g_logits: np.ndarray) -> None:
        start = self.backward_start()
        if start is None:
            return
        grad = g_logits
        for i in range(len(self.layers) - 1, start - 1, -1):
            grad = self.layers[i].backward(grad, need_input_grad=i > start)

    def trainable_params(self) -> list[tuple[int, str, np.ndarray]]:
        items = []
        for i, layer in enumerate(self.layers):
            if layer.trainable:
                for name, arr in layer.params().items():
                    items.append((i, name, arr))
        return items

    def state_items(self) -> list[tuple[int, str, np.ndarray]]:
        """Every parameter, trainable or not, in a stable order."""
        items = []
        for i, layer in enumerate(self.layers):
            for name, arr in layer.params().items():
                items.append((i, name, arr))
        return items

    def stored_activation_elements(self) -> int:
        return sum(c.stored_elements() for c in self.conv_layers)

    def conv_bp_flops_per_sample(self) -> int:
        """Per-sample analytic cost of one backward pass: every conv layer the
        gradient actually reaches is charged in its current mode."""
        start = self.backward_start()
        if start is None:
            return 0
        return sum(
            layer.bp_flops_per_sample()
            for i, layer in enumerate(self.layers)
            if i >= start and isinstance(layer, Conv2D)
        )


def build_desk_model(in_channels: int, class_count: int, image_hw, seed: int) -> Model:
    """The small three-conv benchmark network.

    conv3x3(8) - relu - pool - conv3x3(16) - relu - pool - conv3x3(32) -
    relu - flatten - linear(class_count), all same-padding.
    """
    h, w = int(image_hw[0]), int(image_hw[1])
    if h % 4 != 0 or w % 4 != 0:
        raise ConfigError(f"image size {h}x{w} must be divisible by 4 (two poolings)")
    rng = np.random.default_rng(seed)
    channels = (8, 16, 32)
    layers = []
    c_prev = in_channels
    for i, c in enumerate(channels):
        layers.append(Conv2D.init(rng, c_prev, c, k=3, padding=1))
        layers.append(ReLU())
        if i < 2:
            layers.append(AvgPool2())
        c_prev = c
    layers.append(Flatten())
    feat = channels[-1] * (h // 4) * (w // 4)
    layers.append(Linear.init(rng, feat, class_count))
    return Model(layers)


def set_active_layers(model: Model, k: int, mode: str, r: int | None = None) -> Model:
    """Freeze all but the last k conv layers; those run in the given mode.

    The final classifier always trains.  Returns the same model.
    """
    convs = model.conv_layers
    if not 0 <= k <= len(convs):
        raise ConfigError(f"k must be in [0, {len(convs)}], got {k}")
    if mode not in ("vanilla", "filtered"):
        raise ConfigError(f"active mode must be vanilla or filtered, got {mode!r}")
    cut = len(convs) - k
    for i, conv in enumerate(convs):
        if i < cut:
            conv.set_mode("frozen")
        else:
            conv.set_mode(mode, r=r)
    return model
