"""Binary model persistence.

Layout: an 8-byte magic string, a little-endian u32 format version, a u32
entry count, then one entry per parameter in model order.  Each entry is
(layer index u32, name length u16, UTF-8 name, ndim u8, dims as u32s,
little-endian float64 data).  Loading restores values in place and insists
on an exact structural match with the receiving model.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError, ShapeError
from .nn import Model

__all__ = ["MAGIC", "VERSION", "save_checkpoint", "read_checkpoint", "load_checkpoint"]

MAGIC = b"GFCKPT1\n"
VERSION = 1


def save_checkpoint(model: Model, path) -> None:
    entries = model.state_items()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(entries)))
        for idx, name, arr in entries:
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<IH", idx, len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


class _Cursor:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.blob):
            raise FormatError(f"{self.path}: truncated at byte {self.pos}")
        chunk = self.blob[self.pos : self.pos + count]
        self.pos += count
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_checkpoint(path) -> list[tuple[int, str, np.ndarray]]:
    """Parse a checkpoint into (layer index, name, array) entries."""
    cur = _Cursor(open(path, "rb").read(), path)
    if cur.take(len(MAGIC)) != MAGIC:
        raise FormatError(f"{path}: not a checkpoint (magic mismatch)")
    version, count = cur.unpack("<II")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    entries = []
    for _ in range(count):
        idx, name_len = cur.unpack("<IH")
        name = cur.take(name_len).decode("utf-8")
        (ndim,) = cur.unpack("<B")
        dims = cur.unpack(f"<{ndim}I")
        size = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        data = np.frombuffer(cur.take(8 * size), dtype="<f8").reshape(dims)
        entries.append((idx, name, data.astype(np.float64)))
    if cur.pos != len(cur.blob):
        raise FormatError(f"{path}: {len(cur.blob) - cur.pos} trailing bytes")
    return entries


def load_checkpoint(model: Model, path) -> Model:
    """Copy stored values into the model's parameters, entry for entry."""
    stored = {(idx, name): arr for idx, name, arr in read_checkpoint(path)}
    for idx, name, param in model.state_items():
        key = (idx, name)
        if key not in stored:
            raise FormatError(f"{path}: no entry for layer {idx} parameter {name!r}")
        arr = stored.pop(key)
        if arr.shape != param.shape:
            raise ShapeError(
                f"layer {idx} parameter {name!r}: stored shape {arr.shape}, "
                f"model wants {param.shape}"
            )
        param[...] = arr
    if stored:
        extra = ", ".join(f"{idx}/{name}" for idx, name in sorted(stored))
        raise FormatError(f"{path}: entries with no matching parameter: {extra}")
    return model
