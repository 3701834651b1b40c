"""Dataset ingestion and generation.

Three sources feed the training harness: big-endian IDX file pairs (the
classic MNIST container), a seeded synthetic classification set built from
per-class templates plus Gaussian noise, and shard-based non-i.i.d. splits
of either.  All images end up as normalized float64 Tensor4 batches with
per-channel mean 0 and standard deviation 1 computed on the full set.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FormatError
from .tensor import Tensor4

__all__ = [
    "Dataset",
    "SplitSpec",
    "load_idx",
    "read_idx_raw",
    "write_idx",
    "synth_raw",
    "synth_dataset",
    "split_indices",
    "noniid_split",
]

_IMAGE_MAGIC = 0x00000803
_LABEL_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    """An immutable labeled image batch.

    images holds normalized values; partitions produced by noniid_split keep
    the parent set's normalization rather than recomputing their own.
    """

    images: Tensor4
    labels: tuple[int, ...]
    class_count: int

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(int(v) for v in self.labels))
        n = self.images.dims[0]
        if len(self.labels) != n:
            raise ConfigError(f"{len(self.labels)} labels for {n} images")
        if self.class_count < 1:
            raise ConfigError("class_count must be at least 1")
        for value in self.labels:
            if not 0 <= value < self.class_count:
                raise ConfigError(f"label {value} outside [0, {self.class_count})")

    def __len__(self) -> int:
        return self.images.dims[0]


@dataclass(frozen=True)
class SplitSpec:
    """Shard count and shuffle seed for the two-partition split."""

    shard_count: int
    seed: int

    def __post_init__(self):
        if self.shard_count < 2 or self.shard_count % 2 != 0:
            raise ConfigError(f"shard_count must be even and >= 2, got {self.shard_count}")


def _normalize_per_channel(raw: np.ndarray) -> np.ndarray:
    mean = raw.mean(axis=(0, 2, 3), keepdims=True)
    std = raw.std(axis=(0, 2, 3), keepdims=True)
    std = np.where(std > 0, std, 1.0)
    return (raw - mean) / std


def _parse_idx_images(path) -> np.ndarray:
    blob = open(path, "rb").read()
    if len(blob) < 16:
        raise FormatError(f"{path}: too short for an IDX image header")
    magic, n, h, w = struct.unpack(">IIII", blob[:16])
    if magic != _IMAGE_MAGIC:
        raise FormatError(f"{path}: image magic 0x{magic:08x}, expected 0x{_IMAGE_MAGIC:08x}")
    expected = 16 + n * h * w
    if len(blob) != expected:
        raise FormatError(f"{path}: payload is {len(blob)} bytes, expected {expected}")
    return np.frombuffer(blob, dtype=np.uint8, offset=16).reshape(n, h, w)


def _parse_idx_labels(path) -> tuple[int, ...]:
    blob = open(path, "rb").read()
    if len(blob) < 8:
        raise FormatError(f"{path}: too short for an IDX label header")
    magic, n = struct.unpack(">II", blob[:8])
    if magic != _LABEL_MAGIC:
        raise FormatError(f"{path}: label magic 0x{magic:08x}, expected 0x{_LABEL_MAGIC:08x}")
    if len(blob) != 8 + n:
        raise FormatError(f"{path}: payload is {len(blob)} bytes, expected {8 + n}")
    return tuple(int(v) for v in blob[8:])


def read_idx_raw(images_path, labels_path) -> tuple[np.ndarray, tuple[int, ...]]:
    """Parse an IDX pair without scaling: (N, H, W) uint8 pixels and labels."""
    images = _parse_idx_images(images_path)
    labels = _parse_idx_labels(labels_path)
    if images.shape[0] != len(labels):
        raise FormatError(
            f"{images.shape[0]} images but {len(labels)} labels"
        )
    return images, labels


def write_idx(images: np.ndarray, labels, images_path, labels_path) -> None:
    """Write a (N, H, W) uint8 array and its labels as a big-endian IDX pair."""
    arr = np.asarray(images)
    if arr.dtype != np.uint8 or arr.ndim != 3:
        raise FormatError("images must be a uint8 array of shape (N, H, W)")
    values = [int(v) for v in labels]
    if len(values) != arr.shape[0]:
        raise FormatError(f"{arr.shape[0]} images but {len(values)} labels")
    if any(not 0 <= v <= 255 for v in values):
        raise FormatError("labels must fit in one byte")
    n, h, w = arr.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", _IMAGE_MAGIC, n, h, w))
        fh.write(arr.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", _LABEL_MAGIC, n))
        fh.write(bytes(values))


def load_idx(images_path, labels_path) -> Dataset:
    """Read an IDX pair into a normalized single-channel Dataset."""
    images, labels = read_idx_raw(images_path, labels_path)
    raw = images.astype(np.float64)[:, None, :, :] / 255.0
    k = max(labels) + 1
    return Dataset(images=Tensor4(_normalize_per_channel(raw)), labels=labels, class_count=k)


def synth_raw(seed: int, k: int, n_per_class: int, dims, sigma: float = 0.25):
    """Generate the unnormalized synthetic set.

    Each class gets a fixed template drawn uniformly from [0, 1]; samples are
    the template plus clamped Gaussian noise.  Returns (raw, labels,
    templates) with raw in class-major order, shape (k * n_per_class,) + dims.
    """
    if k < 2:
        raise ConfigError(f"need at least 2 classes, got {k}")
    if n_per_class < 1:
        raise ConfigError("n_per_class must be at least 1")
    c, h, w = (int(d) for d in dims)
    if min(c, h, w) < 1:
        raise ConfigError(f"invalid sample dims {dims!r}")
    if sigma < 0:
        raise ConfigError("sigma must not be negative")
    rng = np.random.default_rng(seed)
    templates = rng.uniform(0.0, 1.0, size=(k, c, h, w))
    samples = np.repeat(templates[:, None], n_per_class, axis=1)
    if sigma > 0:
        samples = samples + rng.normal(0.0, sigma, size=samples.shape)
    raw = np.clip(samples, 0.0, 1.0).reshape(k * n_per_class, c, h, w)
    labels = tuple(cls for cls in range(k) for _ in range(n_per_class))
    return raw, labels, templates


def synth_dataset(seed: int, k: int, n_per_class: int, dims, sigma: float = 0.25) -> Dataset:
    """synth_raw followed by per-channel normalization."""
    raw, labels, _ = synth_raw(seed, k, n_per_class, dims, sigma)
    return Dataset(images=Tensor4(_normalize_per_channel(raw)), labels=labels, class_count=k)


def split_indices(labels, spec: SplitSpec) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Deal label-sorted contiguous shards alternately into two halves.

    Indices are sorted by label (stable), cut into spec.shard_count equal
    shards, the shard order is shuffled with spec.seed, and shards go to the
    two partitions alternately.  Few shards relative to the class count
    yields strongly skewed label histograms.
    """
    n = len(labels)
    if n % spec.shard_count != 0:
        raise ConfigError(f"{n} samples not divisible into {spec.shard_count} shards")
    order = np.argsort(np.asarray(labels), kind="stable")
    shards = order.reshape(spec.shard_count, n // spec.shard_count)
    perm = np.random.default_rng(spec.seed).permutation(spec.shard_count)
    idx_a = np.concatenate([shards[s] for s in perm[0::2]])
    idx_b = np.concatenate([shards[s] for s in perm[1::2]])
    return tuple(int(i) for i in idx_a), tuple(int(i) for i in idx_b)


def _take(ds: Dataset, indices) -> Dataset:
    images = Tensor4(ds.images.data[list(indices)])
    labels = tuple(ds.labels[i] for i in indices)
    return Dataset(images=images, labels=labels, class_count=ds.class_count)


def noniid_split(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Split a dataset into two equal, disjoint, label-skewed partitions."""
    idx_a, idx_b = split_indices(ds.labels, spec)
    return _take(ds, idx_a), _take(ds, idx_b)
