"""Differentiable operators: each takes Nodes (or arrays) and returns a Node."""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from . import conv as K
from .autodiff import Node, constant, make_node
from .tensor import DTYPE

LUMA = (0.299, 0.587, 0.114)
BN_EPS = 1e-5
BN_MOMENTUM = 0.99


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Node:
    if not isinstance(b, Node) and np.ndim(b) == 0:
        return make_node(a.value + DTYPE(b), (a,), lambda g: (g,), "add_scalar")
    a, b = constant(a), constant(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return make_node(a.value + b.value, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Node:
    a, b = constant(a), constant(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return make_node(a.value - b.value, (a, b), lambda g: (g, -g), "sub")


def mul(a, b) -> Node:
    if not isinstance(b, Node) and np.ndim(b) == 0:
        return scale(a, b)
    a, b = constant(a), constant(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    av, bv = a.value, b.value
    return make_node(av * bv, (a, b), lambda g: (g * bv, g * av), "mul")


def scale(x: Node, c: float) -> Node:
    c = DTYPE(c)
    return make_node(x.value * c, (x,), lambda g: (g * c,), "scale")


def channel_affine(x: Node, scale_c, shift_c) -> Node:
    """Fixed per-channel ``x * scale + shift``."""
    sc = np.asarray(scale_c, dtype=x.value.dtype).reshape(1, -1, 1, 1)
    sh = np.asarray(shift_c, dtype=x.value.dtype).reshape(1, -1, 1, 1)
    return make_node(x.value * sc + sh, (x,), lambda g: (g * sc,), "channel_affine")


def square(x: Node) -> Node:
    v = x.value
    return make_node(v * v, (x,), lambda g: (2 * g * v,), "square")


def log(x: Node) -> Node:
    v = x.value
    return make_node(np.log(v), (x,), lambda g: (g / v,), "log")


def clamp(x: Node, lo: float, hi: float) -> Node:
    v = x.value
    inside = ((v >= lo) & (v <= hi)).astype(v.dtype)
    return make_node(np.clip(v, lo, hi), (x,), lambda g: (g * inside,), "clamp")


def sigmoid(x: Node) -> Node:
    v = x.value
    # split by sign so exp never overflows
    e = np.exp(-np.abs(v))
    y = np.where(v >= 0, 1 / (1 + e), e / (1 + e)).astype(v.dtype)
    return make_node(y, (x,), lambda g: (g * y * (1 - y),), "sigmoid")


def relu(x: Node) -> Node:
    v = x.value
    mask = v > 0
    return make_node(np.where(mask, v, 0).astype(v.dtype), (x,), lambda g: (g * mask,), "relu")


def leaky_relu(x: Node, slope: float) -> Node:
    v = x.value
    f = np.where(v > 0, 1, slope).astype(v.dtype)
    return make_node(v * f, (x,), lambda g: (g * f,), "leaky_relu")


def prelu(x: Node, a: Node) -> Node:
    """y = x where x > 0, else a[c] * x (one learned slope per channel)."""
    v, av = x.value, a.value.reshape(-1)
    if av.size != v.shape[1]:
        raise ValueError(f"prelu needs {v.shape[1]} slopes, got {av.size}")
    pos = v > 0
    slope = np.where(pos, 1, av.reshape(1, -1, 1, 1)).astype(v.dtype)

    def backward(g):
        ga = np.where(pos, 0, g * v).sum(axis=(0, 2, 3))
        return g * slope, ga.reshape(a.value.shape)

    return make_node(v * slope, (x, a), backward, "prelu")


# ---------------------------------------------------------------- reductions

def sum_all(x: Node) -> Node:
    shape = x.shape
    out = np.asarray(x.value.sum(dtype=np.float64), dtype=x.value.dtype).reshape(1, 1, 1, 1)
    return make_node(out, (x,), lambda g: (np.broadcast_to(g.reshape(1, 1, 1, 1), shape).copy(),), "sum_all")


def mean_all(x: Node) -> Node:
    return scale(sum_all(x), 1.0 / x.value.size)


def sum_per_image(x: Node) -> Node:
    """(n, c, h, w) -> (n, 1, 1, 1)."""
    shape = x.shape
    out = x.value.sum(axis=(1, 2, 3), keepdims=True, dtype=np.float64).astype(x.value.dtype)
    return make_node(out, (x,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum_per_image")


def l2_norm_per_image(x: Node) -> Node:
    """Unsquared Euclidean norm of each image; gradient taken as 0 at the origin."""
    v = x.value
    norm = np.sqrt((v.astype(np.float64) ** 2).sum(axis=(1, 2, 3), keepdims=True))
    safe = np.where(norm > 0, norm, 1.0)

    def backward(g):
        return ((g * v) / safe).astype(v.dtype),

    return make_node(norm.astype(v.dtype), (x,), backward, "l2_norm")


def global_avg_pool(x: Node) -> Node:
    N, C, H, W = x.shape
    out = x.value.mean(axis=(2, 3), keepdims=True)
    return make_node(out, (x,), lambda g: (np.broadcast_to(g / (H * W), x.shape).copy(),), "avg_pool")


def max_pool2d(x: Node) -> Node:
    """2x2 max pooling with stride 2; odd trailing rows/cols are dropped."""
    v = x.value
    N, C, H, W = v.shape
    Ho, Wo = H // 2, W // 2
    blocks = v[:, :, :2 * Ho, :2 * Wo].reshape(N, C, Ho, 2, Wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, Ho, Wo, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros((N, C, Ho, Wo, 4), dtype=g.dtype)
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        gx = np.zeros_like(v)
        gx[:, :, :2 * Ho, :2 * Wo] = gb.reshape(N, C, Ho, Wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, 2 * Ho, 2 * Wo)
        return gx,

    return make_node(out, (x,), backward, "max_pool2d")


def diff_h(x: Node) -> Node:
    """Forward difference along width: x[..., j+1] - x[..., j]."""
    v = x.value

    def backward(g):
        gx = np.zeros_like(v)
        gx[..., 1:] += g
        gx[..., :-1] -= g
        return gx,

    return make_node(v[..., 1:] - v[..., :-1], (x,), backward, "diff_h")


def diff_v(x: Node) -> Node:
    """Forward difference along height."""
    v = x.value

    def backward(g):
        gx = np.zeros_like(v)
        gx[:, :, 1:] += g
        gx[:, :, :-1] -= g
        return gx,

    return make_node(v[:, :, 1:] - v[:, :, :-1], (x,), backward, "diff_v")


def pad_zero(x: Node, top: int, bottom: int, left: int, right: int) -> Node:
    v = x.value
    H, W = v.shape[2:]
    out = np.pad(v, ((0, 0), (0, 0), (top, bottom), (left, right)))
    return make_node(out, (x,), lambda g: (g[:, :, top:top + H, left:left + W],), "pad_zero")


def crop_window(x: Node, top: int, left: int, h: int, w: int) -> Node:
    v = x.value

    def backward(g):
        gx = np.zeros_like(v)
        gx[:, :, top:top + h, left:left + w] = g
        return gx,

    return make_node(v[:, :, top:top + h, left:left + w], (x,), backward, "crop_window")


# ---------------------------------------------------------------- convolution

@dataclass(frozen=True)
class Conv2dSpec:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0
    has_bias: bool = True

    def __post_init__(self):
        if self.stride not in (1, 2):
            raise ValueError(f"stride must be 1 or 2, got {self.stride}")
        if min(self.in_channels, self.out_channels, self.kernel) < 1 or self.padding < 0:
            raise ValueError(f"invalid conv spec {self}")

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        ho = K.out_size(h, self.kernel, self.stride, self.padding)
        wo = K.out_size(w, self.kernel, self.stride, self.padding)
        if ho < 1 or wo < 1:
            raise ValueError(f"{h}x{w} input too small for {self}")
        return ho, wo


@dataclass(frozen=True)
class ConvTranspose2dSpec:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 2
    padding: int = 0
    has_bias: bool = True

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        ho = K.transpose_out_size(h, self.kernel, self.stride, self.padding)
        wo = K.transpose_out_size(w, self.kernel, self.stride, self.padding)
        if ho < 1 or wo < 1:
            raise ValueError(f"{h}x{w} input too small for {self}")
        return ho, wo


def _add_bias(y, bias):
    if bias is not None:
        y += bias.value.reshape(1, -1, 1, 1)
    return y


def conv2d(x, spec: Conv2dSpec, weight: Node, bias: Node | None = None) -> Node:
    x = constant(x)
    if x.shape[1] != spec.in_channels:
        raise ValueError(f"conv2d expects {spec.in_channels} input channels, got {x.shape[1]}")
    spec.output_hw(*x.shape[2:])
    s, p, k = spec.stride, spec.padding, spec.kernel
    xp = K.zero_pad(x.value, p)
    w = weight.value
    y = _add_bias(K.correlate(xp, w, s), bias)

    def backward(g):
        gx = K.crop(K.correlate_adjoint(g, w, s, xp.shape), p) if x.requires_grad else None
        gw = K.correlate_weight_grad(xp, g, s, k) if weight.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node(y, parents, backward, "conv2d")


def conv2d_transpose(x, spec: ConvTranspose2dSpec, weight: Node, bias: Node | None = None) -> Node:
    """Weight layout (in_channels, out_channels, k, k); the exact adjoint of conv2d."""
    x = constant(x)
    if x.shape[1] != spec.in_channels:
        raise ValueError(f"conv2d_transpose expects {spec.in_channels} input channels, got {x.shape[1]}")
    spec.output_hw(*x.shape[2:])
    s, p, k = spec.stride, spec.padding, spec.kernel
    w = weight.value
    y = _add_bias(K.conv_transpose2d_forward(x.value, w, s, p), bias)

    def backward(g):
        gp = K.zero_pad(g, p)
        gx = K.correlate(gp, w, s) if x.requires_grad else None
        gw = K.correlate_weight_grad(gp, x.value, s, k) if weight.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node(y, parents, backward, "conv2d_transpose")


# ---------------------------------------------------------------- normalization

def batch_norm(x: Node, gamma: Node, beta: Node, training: bool,
               running_mean: Node, running_var: Node,
               momentum: float = BN_MOMENTUM, eps: float = BN_EPS) -> Node:
    """Per-channel normalization over (n, h, w).

    In training mode the batch statistics are used and the running averages
    are updated in place; in eval mode the running averages are used.
    """
    v = x.value
    C = v.shape[1]
    if gamma.value.size != C or beta.value.size != C:
        raise ValueError(f"batch_norm needs {C} gamma/beta entries")
    gm = gamma.value.reshape(1, C, 1, 1)
    bt = beta.value.reshape(1, C, 1, 1)
    if training:
        mean = v.mean(axis=(0, 2, 3), keepdims=True, dtype=np.float64)
        var = ((v - mean) ** 2).mean(axis=(0, 2, 3), keepdims=True)
        running_mean.value[...] = (momentum * running_mean.value.reshape(1, C, 1, 1)
                                   + (1 - momentum) * mean).reshape(running_mean.value.shape)
        running_var.value[...] = (momentum * running_var.value.reshape(1, C, 1, 1)
                                  + (1 - momentum) * var).reshape(running_var.value.shape)
    else:
        mean = running_mean.value.reshape(1, C, 1, 1).astype(np.float64)
        var = running_var.value.reshape(1, C, 1, 1).astype(np.float64)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((v - mean) * inv).astype(v.dtype)
    y = gm * xhat + bt
    m = v.size // C

    def backward(g):
        gg = (g * xhat).sum(axis=(0, 2, 3))
        gb = g.sum(axis=(0, 2, 3))
        gxhat = g * gm
        if training:
            gx = (inv / m) * (m * gxhat - gxhat.sum(axis=(0, 2, 3), keepdims=True)
                              - xhat * (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True))
        else:
            gx = gxhat * inv
        return gx.astype(v.dtype), gg.reshape(gamma.value.shape), gb.reshape(beta.value.shape)

    return make_node(y.astype(v.dtype), (x, gamma, beta), backward, "batch_norm")


# ---------------------------------------------------------------- color / blur

def grayscale(x) -> Node:
    """Luma 0.299 R + 0.587 G + 0.114 B, shape (n, 1, h, w)."""
    x = constant(x)
    if x.shape[1] != 3:
        raise ValueError(f"grayscale needs 3 channels, got {x.shape[1]}")
    w = np.asarray(LUMA, dtype=x.value.dtype).reshape(1, 3, 1, 1)
    y = (x.value * w).sum(axis=1, keepdims=True)
    return make_node(y, (x,), lambda g: (g * w,), "grayscale")


@dataclass(frozen=True)
class GaussianKernel:
    """G(k, l) = A exp(-(k - mu)^2 / (2 s) - (l - mu)^2 / (2 s)) on offsets -r..r.

    ``s`` is ``sigma`` as written in the colour-loss definition, or ``sigma**2``
    when ``sigma_squared`` is set. The kernel is separable; ``factor`` is the
    un-amplified 1-D profile shared by rows and columns.
    """

    amplitude: float
    mu: float
    sigma: float
    radius: int
    sigma_squared: bool = False

    @property
    def factor(self) -> np.ndarray:
        k = np.arange(-self.radius, self.radius + 1, dtype=np.float64)
        denom = 2 * (self.sigma ** 2 if self.sigma_squared else self.sigma)
        return np.exp(-((k - self.mu) ** 2) / denom)

    @property
    def weights(self) -> np.ndarray:
        f = self.factor
        return self.amplitude * np.outer(f, f)


def build_gaussian_kernel(amplitude: float = 0.053, mu: float = 0.0, sigma: float = 3.0,
                          radius: int = 10, sigma_squared: bool = False) -> GaussianKernel:
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")
    return GaussianKernel(float(amplitude), float(mu), float(sigma), int(radius), sigma_squared)


def reflect_index(i: np.ndarray, n: int) -> np.ndarray:
    """Mirror indices into [0, n) without repeating the edge sample."""
    if n == 1:
        return np.zeros_like(i)
    period = 2 * (n - 1)
    i = np.mod(i, period)
    return np.where(i >= n, period - i, i)


@functools.lru_cache(maxsize=64)
def _blur_matrix(n: int, profile: tuple) -> np.ndarray:
    """(n, n) matrix B with (B x)[i] = sum_k profile[k] x[reflect(i + k - r)]."""
    r = (len(profile) - 1) // 2
    B = np.zeros((n, n))
    rows = np.arange(n)
    for t, gk in enumerate(profile):
        np.add.at(B, (rows, reflect_index(rows + t - r, n)), gk)
    return B


def gaussian_blur(x, kernel: GaussianKernel) -> Node:
    """Per-channel correlation with ``kernel`` using reflection padding."""
    x = constant(x)
    H, W = x.shape[2:]
    prof = tuple(kernel.factor.tolist())
    dt = x.value.dtype
    Bh = (kernel.amplitude * _blur_matrix(H, prof)).astype(dt)
    Bw = _blur_matrix(W, prof).astype(dt)
    y = Bh @ x.value @ Bw.T
    return make_node(y, (x,), lambda g: (Bh.T @ g @ Bw,), "gaussian_blur")


def gaussian_profile(sigma: float, radius: int | None = None) -> np.ndarray:
    """Normalised 1-D Gaussian with the conventional 2 sigma^2 denominator."""
    if radius is None:
        radius = max(1, int(math.ceil(3 * sigma)))
    k = np.arange(-radius, radius + 1, dtype=np.float64)
    p = np.exp(-(k ** 2) / (2 * sigma ** 2))
    return p / p.sum()


def blur_array(x: np.ndarray, sigma: float) -> np.ndarray:
    """Normalised Gaussian blur of a raw (n, c, h, w) array; no tape."""
    if sigma <= 0:
        return x.copy()
    prof = tuple(gaussian_profile(sigma).tolist())
    H, W = x.shape[2:]
    return (_blur_matrix(H, prof) @ x @ _blur_matrix(W, prof).T).astype(x.dtype)
