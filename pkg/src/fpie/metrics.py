"""Full-reference image quality metrics: PSNR and the SSIM family.

Inputs are (n, c, h, w) arrays in [0, max_val]. By default 3-channel images are
reduced to luma (0.299 R + 0.587 G + 0.114 B) first; ``mode="rgb"`` instead
averages the per-channel scores. All accumulation happens in float64.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ops import LUMA

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
K1, K2 = 0.01, 0.03
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


@dataclass
class MetricReport:
    psnr_db: float
    ssim: float
    ms_ssim: float
    n_images: int

    COLUMNS = ("psnr", "ssim", "ms_ssim", "n")

    def row(self) -> list[str]:
        return [_fmt(self.psnr_db), _fmt(self.ssim), _fmt(self.ms_ssim), str(self.n_images)]

    def table(self, sep: str = "\t") -> str:
        return sep.join(self.COLUMNS) + "\n" + sep.join(self.row())


def _fmt(v: float) -> str:
    if math.isinf(v):
        return "inf"
    if math.isnan(v):
        return "nan"
    return f"{v:.4f}"


def _planes(x, mode: str) -> np.ndarray:
    """(n, c, h, w) -> (n, c', h, w) float64 planes to score."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None, None]
    elif x.ndim == 3:
        x = x[None]
    if mode == "luma":
        if x.shape[1] == 3:
            # elementwise rather than tensordot: BLAS rounding depends on memory layout
            x = (LUMA[0] * x[:, 0] + LUMA[1] * x[:, 1] + LUMA[2] * x[:, 2])[:, None]
    elif mode != "rgb":
        raise ValueError(f"mode must be 'luma' or 'rgb', got {mode!r}")
    return x


def _check(x, y):
    if np.shape(x) != np.shape(y):
        raise ValueError(f"shape mismatch: {np.shape(x)} vs {np.shape(y)}")


def psnr(x, y, max_val: float = 1.0, mode: str = "luma") -> float:
    """10 log10(max_val^2 / MSE) over the whole array; +inf for identical inputs."""
    _check(x, y)
    if max_val <= 0:
        raise ValueError("max_val must be positive")
    mse = float(np.mean((_planes(x, mode) - _planes(y, mode)) ** 2))
    if mse == 0:
        return math.inf
    return 10 * math.log10(max_val ** 2 / mse)


def _gauss_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA) -> np.ndarray:
    k = np.arange(size) - (size - 1) / 2
    g = np.exp(-(k ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable 'valid' correlation over the last two axes."""
    n = len(g)
    H, W = x.shape[-2:]
    rows = sum(g[i] * x[..., i:H - n + 1 + i, :] for i in range(n))
    return sum(g[i] * rows[..., i:W - n + 1 + i] for i in range(n))


def _ssim_terms(x, y, max_val):
    """Per-plane mean luminance term and contrast-structure term."""
    g = _gauss_window()
    C1, C2 = (K1 * max_val) ** 2, (K2 * max_val) ** 2
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    lum = (2 * mx * my + C1) / (mx * mx + my * my + C1)
    cs = (2 * sxy + C2) / (sxx + syy + C2)
    return lum.mean(axis=(-2, -1)), (lum * cs).mean(axis=(-2, -1)), cs.mean(axis=(-2, -1))


def _check_size(h, w, scales):
    need = SSIM_WINDOW * 2 ** (scales - 1)
    if min(h, w) < need:
        raise ValueError(f"{h}x{w} image too small for {scales}-scale SSIM (needs >= {need} px)")


def ssim_per_image(x, y, max_val: float = 1.0, mode: str = "luma") -> np.ndarray:
    _check(x, y)
    a, b = _planes(x, mode), _planes(y, mode)
    _check_size(*a.shape[-2:], 1)
    _, s, _ = _ssim_terms(a, b, max_val)
    return s.mean(axis=1)


def ssim(x, y, max_val: float = 1.0, mode: str = "luma") -> float:
    """Gaussian-window (11x11, sigma 1.5) SSIM averaged over images."""
    return float(ssim_per_image(x, y, max_val, mode).mean())


def _downsample(x):
    """2x2 average then decimate."""
    H, W = x.shape[-2:]
    x = x[..., :H - H % 2, :W - W % 2]
    return 0.25 * (x[..., ::2, ::2] + x[..., 1::2, ::2] + x[..., ::2, 1::2] + x[..., 1::2, 1::2])


def ms_ssim_per_image(x, y, max_val: float = 1.0, mode: str = "luma",
                      weights=MS_SSIM_WEIGHTS) -> np.ndarray:
    _check(x, y)
    a, b = _planes(x, mode), _planes(y, mode)
    _check_size(*a.shape[-2:], len(weights))
    result = np.ones(a.shape[:2])
    for i, w in enumerate(weights):
        _, s, cs = _ssim_terms(a, b, max_val)
        last = i == len(weights) - 1
        # negative contrast-structure would make fractional powers undefined
        term = np.maximum(s if last else cs, 0.0)
        result = result * term ** w
        if not last:
            a, b = _downsample(a), _downsample(b)
    return result.mean(axis=1)


def ms_ssim(x, y, max_val: float = 1.0, mode: str = "luma") -> float:
    """Five-scale MS-SSIM averaged over images; needs H, W >= 176."""
    return float(ms_ssim_per_image(x, y, max_val, mode).mean())


def evaluate(pairs, max_val: float = 1.0, mode: str = "luma") -> MetricReport:
    """Average per-image PSNR / SSIM / MS-SSIM over (output, reference) array pairs.

    MS-SSIM is reported as NaN when the images are too small for five scales.
    """
    ps, ss, ms = [], [], []
    for out, ref in pairs:
        out, ref = np.asarray(out), np.asarray(ref)
        for i in range(out.shape[0] if out.ndim == 4 else 1):
            o, r = (out[i:i + 1], ref[i:i + 1]) if out.ndim == 4 else (out, ref)
            ps.append(psnr(o, r, max_val, mode))
            ss.append(ssim(o, r, max_val, mode))
            try:
                ms.append(ms_ssim(o, r, max_val, mode))
            except ValueError:
                ms.append(math.nan)
    if not ps:
        raise ValueError("no images to evaluate")
    return MetricReport(float(np.mean(ps)), float(np.mean(ss)), float(np.mean(ms)), len(ps))
