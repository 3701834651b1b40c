"""Loss, schedule, optimizer, and the deterministic train/eval loop.

The loop compares backward modes at identical seeds: shuffling comes from
one generator seeded by TrainCfg.seed, parameter initialization from the
model builder's own seed, and every reduction runs in a fixed order, so a
repeated run reproduces its metrics bit for bit.  Computation and memory
are reported analytically per step: each conv layer the gradient reaches
is charged its per-sample backward cost in its current mode, and the peak
count of activation elements cached by conv layers is tracked across steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import ConfigError, ShapeError
from .nn import Model

__all__ = [
    "TrainCfg",
    "EpochRow",
    "TrainMetrics",
    "cross_entropy",
    "cosine_lr",
    "clip_grad_l2",
    "sgd_step",
    "evaluate",
    "train",
]


@dataclass(frozen=True)
class TrainCfg:
    epochs: int
    batch_size: int
    base_lr: float
    momentum: float = 0.9
    weight_decay: float = 1e-4
    clip_threshold: float = 2.0
    warmup_epochs: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.base_lr < 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ConfigError("base_lr, momentum, and weight_decay must be >= 0")
        if self.clip_threshold <= 0:
            raise ConfigError(f"clip_threshold must be > 0, got {self.clip_threshold}")
        if self.warmup_epochs < 0:
            raise ConfigError(f"warmup_epochs must be >= 0, got {self.warmup_epochs}")


@dataclass(frozen=True)
class EpochRow:
    epoch: int
    train_loss: float
    train_acc: float
    val_acc: float
    lr: float

    def __post_init__(self):
        if not 0.0 <= self.train_acc <= 1.0 or not 0.0 <= self.val_acc <= 1.0:
            raise ConfigError("accuracies must lie in [0, 1]")


@dataclass(frozen=True)
class TrainMetrics:
    """Per-epoch rows plus the run summary.

    peak_stored_activation_elements counts convolution inputs cached for the
    kernel gradient (full maps in vanilla mode, patch grids in filtered
    mode); caches of mode-independent layers are not part of the comparison.
    """

    rows: tuple[EpochRow, ...] = field(default_factory=tuple)
    best_val_acc: float = 0.0
    total_flops: int = 0
    peak_stored_activation_elements: int = 0

    def __post_init__(self):
        if not 0.0 <= self.best_val_acc <= 1.0:
            raise ConfigError("best_val_acc must lie in [0, 1]")


def cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy over the batch and its exact gradient."""
    scores = np.asarray(logits, dtype=np.float64)
    if scores.ndim != 2:
        raise ShapeError(f"logits must be (N, K), got shape {scores.shape}")
    n, k = scores.shape
    idx = [int(v) for v in labels]
    if len(idx) != n:
        raise ShapeError(f"{len(idx)} labels for {n} rows of logits")
    if any(not 0 <= v < k for v in idx):
        raise ConfigError(f"labels must lie in [0, {k})")
    shifted = scores - scores.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=1, keepdims=True)
    log_p = shifted - np.log(total)
    loss = -float(log_p[np.arange(n), idx].mean())
    grad = exp / total
    grad[np.arange(n), idx] -= 1.0
    return loss, grad / n


def cosine_lr(step: int, total_steps: int, base_lr: float, warmup_steps: int) -> float:
    """Linear ramp from 0 over the warmup, then cosine decay to 0."""
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * step / warmup_steps
    if total_steps <= warmup_steps:
        return base_lr
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    progress = min(max(progress, 0.0), 1.0)
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * progress))


def clip_grad_l2(grads, threshold: float) -> list[np.ndarray]:
    """Scale the whole gradient list so its global L2 norm is at most threshold."""
    if threshold <= 0:
        raise ConfigError(f"clip threshold must be > 0, got {threshold}")
    arrays = [np.asarray(g, dtype=np.float64) for g in grads]
    norm = math.sqrt(sum(float((g * g).sum()) for g in arrays))
    if norm <= threshold:
        return arrays
    scale = threshold / norm
    return [g * scale for g in arrays]


def sgd_step(params, grads, lr, momentum, weight_decay, state):
    """One in-place SGD update with momentum and L2 weight decay:

    buffer = momentum * buffer + grad + weight_decay * param
    param -= lr * buffer

    Pass state=None on the first call; the returned buffer list feeds the
    next call.
    """
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} params but {len(grads)} grads")
    if state is None:
        state = [np.zeros_like(p) for p in params]
    if len(state) != len(params):
        raise ShapeError(f"{len(state)} momentum buffers for {len(params)} params")
    for p, g, buf in zip(params, grads, state):
        if p.shape != g.shape:
            raise ShapeError(f"param shape {p.shape} != grad shape {g.shape}")
        buf *= momentum
        buf += g + weight_decay * p
        p -= lr * buf
    return state


def evaluate(model: Model, ds: Dataset) -> float:
    """Fraction of argmax-correct predictions; ties go to the lowest class."""
    logits = model.forward(ds.images.data, train=False)
    predicted = logits.argmax(axis=1)
    return float((predicted == np.asarray(ds.labels)).mean())


def train(model: Model, train_set: Dataset, val_set: Dataset, cfg: TrainCfg) -> TrainMetrics:
    """Run the seeded mini-batch loop and collect per-epoch metrics.

    With zero epochs the summary still reports the model's validation
    accuracy as best_val_acc and charges no computation.
    """
    n = len(train_set)
    if n == 0:
        raise ConfigError("training set is empty")
    if model.forward(train_set.images.data[:1], train=False).shape[1] < train_set.class_count:
        raise ConfigError("model emits fewer classes than the dataset contains")
    if cfg.epochs == 0:
        return TrainMetrics(rows=(), best_val_acc=evaluate(model, val_set))

    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    warmup_steps = cfg.warmup_epochs * steps_per_epoch
    rng = np.random.default_rng(cfg.seed)
    labels = np.asarray(train_set.labels)
    state = None
    rows = []
    total_flops = 0
    peak_stored = 0
    step = 0
    for epoch in range(cfg.epochs):
        epoch_lr = cosine_lr(step, total_steps, cfg.base_lr, warmup_steps)
        order = rng.permutation(n)
        loss_sum = 0.0
        correct = 0
        for lo in range(0, n, cfg.batch_size):
            batch = order[lo : lo + cfg.batch_size]
            x = train_set.images.data[batch]
            y = labels[batch]
            logits = model.forward(x, train=True)
            peak_stored = max(peak_stored, model.stored_activation_elements())
            loss, g_logits = cross_entropy(logits, y)
            model.backward(g_logits)
            total_flops += model.conv_bp_flops_per_sample()
            items = model.trainable_params()
            grads = clip_grad_l2(
                [layer_grad for layer_grad in _gather_grads(model, items)],
                cfg.clip_threshold,
            )
            lr = cosine_lr(step, total_steps, cfg.base_lr, warmup_steps)
            state = sgd_step(
                [arr for _, _, arr in items], grads, lr, cfg.momentum, cfg.weight_decay, state
            )
            loss_sum += loss * len(batch)
            correct += int((logits.argmax(axis=1) == y).sum())
            step += 1
        rows.append(
            EpochRow(
                epoch=epoch,
                train_loss=loss_sum / n,
                train_acc=correct / n,
                val_acc=evaluate(model, val_set),
                lr=epoch_lr,
            )
        )
    return TrainMetrics(
        rows=tuple(rows),
        best_val_acc=max(row.val_acc for row in rows),
        total_flops=total_flops,
        peak_stored_activation_elements=peak_stored,
    )


def _gather_grads(model: Model, items) -> list[np.ndarray]:
    grads = []
    for i, name, _ in items:
        layer = model.layers[i]
        if name not in layer.grads:
            raise ConfigError(f"layer {i} has no gradient for {name!r}; backward not run")
        grads.append(layer.grads[name])
    return grads
