"""Paired patches: phone/dslr directory loading, synthetic degradation, batching.

Directory layout::

    <root>/<split>/phone/<id>.png
    <root>/<split>/dslr/<id>.png

Files are 8-bit RGB PNGs; pairs match by basename.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np
from PIL import Image

from .ops import LUMA, blur_array
from .tensor import DTYPE, Rng, make_rng

SPLITS = ("train", "test")


class DatasetError(ValueError):
    pass


@dataclass
class PatchPair:
    phone: np.ndarray
    dslr: np.ndarray
    id: str

    def __post_init__(self):
        if self.phone.shape != self.dslr.shape:
            raise DatasetError(f"{self.id}: phone {self.phone.shape} and dslr {self.dslr.shape} differ")


@dataclass(frozen=True)
class DegradeSpec:
    blur_sigma: float = 1.0
    saturation_scale: float = 0.7
    noise_sigma: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.saturation_scale <= 1:
            raise ValueError(f"saturation_scale must be in (0, 1], got {self.saturation_scale}")
        if self.blur_sigma < 0 or self.noise_sigma < 0:
            raise ValueError("blur_sigma and noise_sigma must be >= 0")


# ---------------------------------------------------------------- PNG I/O

def read_png(path: str | os.PathLike) -> np.ndarray:
    """(1, 3, h, w) float32 in [0, 1]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise DatasetError(f"cannot decode image {path}: {exc}") from exc
    return (arr.transpose(2, 0, 1)[None].astype(DTYPE) / 255.0).astype(DTYPE)


def write_png(path: str | os.PathLike, img: np.ndarray) -> None:
    arr = np.asarray(img)
    if arr.ndim == 4:
        arr = arr[0]
    u8 = np.clip(np.rint(arr.transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(u8, "RGB").save(path)


# ---------------------------------------------------------------- loading

def load_pairs(root: str | os.PathLike, split: str = "train") -> Iterator[PatchPair]:
    """Yield pairs in lexicographic id order; any mismatch is an error."""
    if split not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}, got {split!r}")
    base = Path(root) / split
    phone_dir, dslr_dir = base / "phone", base / "dslr"
    for d in (phone_dir, dslr_dir):
        if not d.is_dir():
            raise DatasetError(f"missing directory {d}")
    phone = {p.stem: p for p in phone_dir.glob("*.png")}
    dslr = {p.stem: p for p in dslr_dir.glob("*.png")}
    for pid in sorted(phone.keys() ^ dslr.keys()):
        side = "dslr" if pid in phone else "phone"
        raise DatasetError(f"pair {pid!r} has no {side} counterpart")
    for pid in sorted(phone):
        a, b = read_png(phone[pid]), read_png(dslr[pid])
        if a.shape != b.shape:
            raise DatasetError(f"pair {pid!r}: size mismatch {a.shape[2:]} vs {b.shape[2:]}")
        yield PatchPair(a, b, pid)


def save_pairs(root: str | os.PathLike, split: str, pairs: Iterable[PatchPair]) -> None:
    base = Path(root) / split
    (base / "phone").mkdir(parents=True, exist_ok=True)
    (base / "dslr").mkdir(parents=True, exist_ok=True)
    for p in pairs:
        write_png(base / "phone" / f"{p.id}.png", p.phone)
        write_png(base / "dslr" / f"{p.id}.png", p.dslr)


# ---------------------------------------------------------------- synthesis

def desaturate(img: np.ndarray, scale: float) -> np.ndarray:
    """Move colours toward their luma by factor ``scale`` (1 keeps them)."""
    luma = (LUMA[0] * img[:, 0] + LUMA[1] * img[:, 1] + LUMA[2] * img[:, 2]).astype(img.dtype)[:, None]
    return luma + scale * (img - luma)


def degrade(img: np.ndarray, spec: DegradeSpec = DegradeSpec(), id: str = "") -> PatchPair:
    """Degraded copy of a clean (1, 3, h, w) image: blurred, desaturated, noisy."""
    img = np.asarray(img, dtype=DTYPE)
    out = blur_array(img, spec.blur_sigma)
    if spec.saturation_scale != 1:
        out = desaturate(out, spec.saturation_scale)
    if spec.noise_sigma > 0:
        out = out + make_rng(spec.seed).normal(0.0, spec.noise_sigma, size=img.shape)
    out = np.clip(out, 0.0, 1.0).astype(DTYPE)
    return PatchPair(out, img.copy(), id)


def synthetic_image(rng: Rng, size: int | tuple[int, int] = 64) -> np.ndarray:
    """A clean colourful test scene: flat shapes over a tinted gradient, with fine stripes."""
    h, w = (size, size) if isinstance(size, int) else size
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    c0, c1 = rng.uniform(0.1, 0.9, 3), rng.uniform(0.1, 0.9, 3)
    angle = rng.uniform(0, 2 * np.pi)
    t = np.clip(0.5 + (np.cos(angle) * (xx - 0.5) + np.sin(angle) * (yy - 0.5)), 0, 1)
    img = c0[:, None, None] * (1 - t) + c1[:, None, None] * t
    for _ in range(rng.integers(3, 7)):
        color = rng.uniform(0, 1, 3)
        color[rng.integers(3)] *= 0.2  # keep shapes saturated
        cy, cx = rng.uniform(0, 1, 2)
        ry, rx = rng.uniform(0.05, 0.3, 2)
        if rng.random() < 0.5:
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1
        else:
            mask = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        img[:, mask] = color[:, None]
    freq = rng.uniform(8, 20)
    img = img + 0.04 * np.sin(2 * np.pi * freq * (xx + 0.3 * yy))
    return np.clip(img, 0, 1).astype(DTYPE)[None]


def synthetic_pairs(count: int, size: int = 64, seed: int = 0,
                    spec: DegradeSpec = DegradeSpec()) -> list[PatchPair]:
    """``count`` synthetic scenes degraded with ``spec``; image i uses noise seed ``spec.seed + i``."""
    rng = make_rng(seed)
    pairs = []
    for i in range(count):
        clean = synthetic_image(rng, size)
        pairs.append(degrade(clean, replace(spec, seed=spec.seed + i), id=f"{seed}_{i:05d}"))
    return pairs


# ---------------------------------------------------------------- batching

def batch(pairs, size: int, rng: Rng) -> Iterator[tuple[np.ndarray, np.ndarray, list[str]]]:
    """Endless (phone, dslr, ids) batches drawn uniformly with replacement."""
    pairs = list(pairs)
    if size < 1:
        raise ValueError(f"batch size must be >= 1, got {size}")
    if not pairs:
        raise DatasetError("empty dataset")
    while True:
        idx = rng.integers(0, len(pairs), size=size)
        yield (np.concatenate([pairs[i].phone for i in idx]),
               np.concatenate([pairs[i].dslr for i in idx]),
               [pairs[i].id for i in idx])
