"""Binary weight files.

Layout, all integers little-endian::

    b"FPIE"                 magic
    u16                     format version (1)
    u32                     tensor count
    per tensor:
        u16 + bytes         UTF-8 name
        4 x u32             dims; lower-rank tensors are left-padded with 1s
        f32 * prod(dims)    row-major payload

Tensors are written in the order given, so a fixed model produces a
byte-identical file.
"""
from __future__ import annotations

import math
import os
import struct
from typing import Mapping

import numpy as np

MAGIC = b"FPIE"
VERSION = 1


class WeightFileError(ValueError):
    """Raised for a bad header or a truncated payload."""


def _dims4(shape) -> tuple[int, int, int, int]:
    if len(shape) > 4:
        raise ValueError(f"tensors are at most 4-D, got shape {shape}")
    return (1,) * (4 - len(shape)) + tuple(int(d) for d in shape)


def encode(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<HI", VERSION, len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError(f"name too long: {name[:40]}...")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<4I", *_dims4(np.shape(arr))))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def decode(buf: bytes) -> dict[str, np.ndarray]:
    if buf[:4] != MAGIC:
        raise WeightFileError("bad magic: not an FPIE weight file")
    pos = 4

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise WeightFileError(f"bad length: file truncated at byte {len(buf)} (needed {pos + n})")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    version, count = struct.unpack("<HI", take(6))
    if version != VERSION:
        raise WeightFileError(f"unsupported weight file version {version}")
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        dims = struct.unpack("<4I", take(16))
        n = math.prod(dims)
        out[name] = np.frombuffer(take(4 * n), dtype="<f4").astype(np.float32).reshape(dims)
    if pos != len(buf):
        raise WeightFileError(f"bad length: {len(buf) - pos} trailing bytes")
    return out


def save(path: str | os.PathLike, tensors: Mapping[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(tensors))


def load(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return decode(fh.read())
