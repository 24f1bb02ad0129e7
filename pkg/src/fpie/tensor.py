"""Dense 4-D float32 tensors in (batch, channel, height, width) order.

Tensors are plain ``numpy.ndarray`` objects; the helpers here enforce the
shape/dtype contract and provide seeded initialisation.

Random streams use numpy's ``Generator`` on the PCG64 bit generator
(``numpy.random.Generator(numpy.random.PCG64(seed))``). PCG64 is a fully
specified integer algorithm and normal draws use numpy's ziggurat sampler, so
a given seed yields the same sequence on every platform.
"""
from __future__ import annotations

import math
import operator

import numpy as np

DTYPE = np.float32
Tensor = np.ndarray
Rng = np.random.Generator

_BINARY_OPS = {"add": operator.add, "sub": operator.sub, "mul": operator.mul}


def make_rng(seed: int) -> Rng:
    """PCG64 stream for ``seed`` (any non-negative 64-bit integer)."""
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must fit in an unsigned 64-bit integer, got {seed}")
    return np.random.Generator(np.random.PCG64(seed))


def check_shape(shape) -> tuple[int, int, int, int]:
    shape = tuple(int(d) for d in shape)
    if len(shape) != 4:
        raise ValueError(f"expected a 4-D (n, c, h, w) shape, got {shape}")
    if any(d < 1 for d in shape):
        raise ValueError(f"all dimensions must be >= 1, got {shape}")
    # keep the flat length addressable by a signed 64-bit index
    if math.prod(shape) >= 2**63:
        raise OverflowError(f"element count of {shape} overflows")
    return shape


def as_tensor(data) -> Tensor:
    """Validate ``data`` as a 4-D tensor and return it as contiguous float32."""
    arr = np.ascontiguousarray(data, dtype=DTYPE)
    check_shape(arr.shape)
    return arr


def zeros(shape) -> Tensor:
    return np.zeros(check_shape(shape), dtype=DTYPE)


def map_binary(a: Tensor, b: Tensor, op: str) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    try:
        fn = _BINARY_OPS[op]
    except KeyError:
        raise ValueError(f"unknown op {op!r}; expected one of {sorted(_BINARY_OPS)}") from None
    return fn(a, b).astype(DTYPE, copy=False)


def random_normal(shape, mean: float, std: float, rng: Rng) -> Tensor:
    if std < 0:
        raise ValueError(f"std must be >= 0, got {std}")
    shape = check_shape(shape)
    if std == 0:
        return np.full(shape, mean, dtype=DTYPE)
    return rng.normal(mean, std, size=shape).astype(DTYPE)


def flat_index(shape, n: int, c: int, h: int, w: int) -> int:
    """Row-major offset of element (n, c, h, w)."""
    _, C, H, W = shape
    return ((n * C + c) * H + h) * W + w


def unflat_index(shape, i: int) -> tuple[int, int, int, int]:
    _, C, H, W = shape
    i, w = divmod(i, W)
    i, h = divmod(i, H)
    n, c = divmod(i, C)
    return n, c, h, w
