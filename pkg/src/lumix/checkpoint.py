"""Checkpoint container: magic, version, config text, named float32 tensors.

Layout (all integers unsigned 32-bit little-endian):

    "LMX1" | version | config length | config utf-8 bytes | record count
    then per record, sorted by name:
    name length | name utf-8 | rank | extents... | float32 LE payload

Serialization is a pure function of (config text, tensor contents), so
identical state produces identical bytes and a round trip preserves every
scalar bit-exactly.
"""

from __future__ import annotations

import struct

import numpy as np

__all__ = ["MAGIC", "VERSION", "CheckpointError", "save_checkpoint", "load_checkpoint"]

MAGIC = b"LMX1"
VERSION = 1


class CheckpointError(Exception):
    """Raised for missing, truncated, or malformed checkpoint files."""


def save_checkpoint(path, config_text: str, tensors: dict[str, np.ndarray]) -> None:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    cfg = config_text.encode("utf-8")
    parts.append(struct.pack("<I", len(cfg)))
    parts.append(cfg)
    parts.append(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype=np.float32, order="C")
        nb = name.encode("utf-8")
        parts.append(struct.pack("<I", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype("<f4").tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(parts))


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.off = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise CheckpointError(
                f"{self.path}: truncated at byte {self.off} (need {n} more)"
            )
        out = self.data[self.off:self.off + n]
        self.off += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path) -> tuple[str, dict[str, np.ndarray]]:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    r = _Reader(data, path)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    config_text = r.take(r.u32()).decode("utf-8")
    count = r.u32()
    tensors: dict[str, np.ndarray] = {}
    prev = None
    for _ in range(count):
        name = r.take(r.u32()).decode("utf-8")
        if prev is not None and name <= prev:
            raise CheckpointError(f"{path}: record names out of order at {name!r}")
        prev = name
        rank = r.u32()
        shape = tuple(r.u32() for _ in range(rank))
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        payload = r.take(4 * n)
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    if r.off != len(data):
        raise CheckpointError(f"{path}: {len(data) - r.off} trailing bytes")
    return config_text, tensors
