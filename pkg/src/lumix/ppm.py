"""Binary PPM (P6, 8-bit) and PGM (P5, 16-bit big-endian) image files."""

from __future__ import annotations

import numpy as np

__all__ = ["write_ppm", "read_ppm", "write_pgm16", "read_pgm16"]


def write_ppm(path, img) -> None:
    """Write an [H, W, 3] float image in [0, 1] as 8-bit binary PPM."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"PPM needs an [H, W, 3] image, got {img.shape}")
    h, w = img.shape[:2]
    data = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def write_pgm16(path, values) -> None:
    """Write an [H, W] uint16 array as 16-bit binary PGM, big-endian samples."""
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError(f"PGM needs an [H, W] array, got {values.shape}")
    if values.dtype != np.uint16:
        raise ValueError(f"PGM16 needs uint16 samples, got {values.dtype}")
    h, w = values.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        f.write(values.astype(">u2").tobytes())


def _read_header(f, magic: bytes):
    got = f.read(2)
    if got != magic:
        raise ValueError(f"bad magic {got!r}, expected {magic!r}")
    fields = []
    while len(fields) < 3:
        tok = b""
        ch = f.read(1)
        while ch.isspace():
            ch = f.read(1)
        if ch == b"#":
            while ch not in (b"\n", b""):
                ch = f.read(1)
            continue
        while ch and not ch.isspace():
            tok += ch
            ch = f.read(1)
        if not tok:
            raise ValueError("truncated header")
        fields.append(int(tok))
    return fields  # width, height, maxval


def read_ppm(path) -> np.ndarray:
    """Read an 8-bit binary PPM into an [H, W, 3] float64 image in [0, 1]."""
    with open(path, "rb") as f:
        w, h, maxval = _read_header(f, b"P6")
        if maxval != 255:
            raise ValueError(f"expected 8-bit PPM, maxval {maxval}")
        raw = f.read(w * h * 3)
    if len(raw) != w * h * 3:
        raise ValueError(f"truncated pixel data: {len(raw)} of {w * h * 3} bytes")
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3) / 255.0


def read_pgm16(path) -> np.ndarray:
    """Read a 16-bit binary PGM into an [H, W] uint16 array."""
    with open(path, "rb") as f:
        w, h, maxval = _read_header(f, b"P5")
        if maxval != 65535:
            raise ValueError(f"expected 16-bit PGM, maxval {maxval}")
        raw = f.read(w * h * 2)
    if len(raw) != w * h * 2:
        raise ValueError(f"truncated pixel data: {len(raw)} of {w * h * 2} bytes")
    return np.frombuffer(raw, dtype=">u2").reshape(h, w).astype(np.uint16)
