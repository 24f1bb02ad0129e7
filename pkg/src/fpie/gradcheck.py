"""Finite-difference gradient checks for every differentiable op and loss.

Each check builds a tiny random problem (at most 1x4x8x8 per input) and
compares the tape gradient of a random projection ``sum(r * f(x))`` against
central differences with step ``eps``. The reported error is

    max |g_ad - g_fd| / max |g_fd|

over all checked leaves. Inputs are sampled away from kinks (relu at 0, clamp
bounds, max-pool ties). For composite checks the inputs are redrawn until
every rectifier pre-activation sits at least ``KINK_MARGIN`` from zero, since
a central difference straddling a kink measures neither one-sided slope.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import losses, models, ops
from .autodiff import Node, backward, constant
from .layers import assign_names
from .tensor import DTYPE, Rng, make_rng

EPS = 1e-3
TOLERANCE = 1e-3
DEFAULT_SEEDS = (0, 1, 2)
KINK_MARGIN = 2e-3
MAX_DRAWS = 200
RECTIFIERS = ("relu", "leaky_relu", "prelu")


@dataclass
class CheckResult:
    name: str
    seed: int
    rel_error: float
    draw: int = 0

    @property
    def ok(self) -> bool:
        return self.rel_error < TOLERANCE

    def line(self) -> str:
        return f"{'ok  ' if self.ok else 'FAIL'} {self.name:<28} seed={self.seed} max_rel_err={self.rel_error:.3e}"


def leaf(value) -> Node:
    return Node(np.ascontiguousarray(value, dtype=DTYPE), requires_grad=True)


def _normal(rng: Rng, shape, std=1.0):
    return rng.normal(0.0, std, size=shape)


def _away_from_zero(rng: Rng, shape, lo=0.1, hi=1.0):
    return rng.uniform(lo, hi, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def _distinct(rng: Rng, shape, gap=0.01):
    """Values with pairwise gaps >= ``gap`` (no max-pool ties under perturbation)."""
    n = int(np.prod(shape))
    return (rng.permutation(n) * gap - n * gap / 2).reshape(shape)


# ---------------------------------------------------------------- registry
# Each builder takes an Rng and returns (forward, leaves). ``forward`` must read
# the ops through the module (``ops.relu`` and not a bound import) so that a
# patched op is what gets checked.

def _unary(op_name, sampler=_normal, shape=(1, 4, 8, 8), **kw):
    def build(rng):
        x = leaf(sampler(rng, shape))
        return (lambda: getattr(ops, op_name)(x, **kw)), [x]
    return build


def _binary(op_name):
    def build(rng):
        a, b = leaf(_normal(rng, (1, 4, 8, 8))), leaf(_normal(rng, (1, 4, 8, 8)))
        return (lambda: getattr(ops, op_name)(a, b)), [a, b]
    return build


def _scale(rng):
    x = leaf(_normal(rng, (1, 4, 8, 8)))
    c = float(rng.uniform(-2, 2))
    return (lambda: ops.scale(x, c)), [x]


def _channel_affine(rng):
    x = leaf(_normal(rng, (1, 4, 8, 8)))
    sc, sh = rng.uniform(0.5, 2, 4), rng.normal(size=4)
    return (lambda: ops.channel_affine(x, sc, sh)), [x]


def _log(rng):
    x = leaf(rng.uniform(0.5, 2.0, (1, 4, 8, 8)))
    return (lambda: ops.log(x)), [x]


def _clamp(rng):
    # keep every value at least 0.05 away from both bounds
    v = rng.uniform(-1, 1, (1, 4, 8, 8))
    v = np.where(np.abs(np.abs(v) - 0.5) < 0.05, v + 0.1 * np.sign(v), v)
    x = leaf(v)
    return (lambda: ops.clamp(x, -0.5, 0.5)), [x]


def _prelu(rng):
    x = leaf(_away_from_zero(rng, (1, 4, 8, 8)))
    a = leaf(rng.uniform(0.05, 0.5, 4))
    return (lambda: ops.prelu(x, a)), [x, a]


def _l2_norm(rng):
    # f32 rounding of the output limits the difference quotient; a small
    # input scale keeps |norm| / |grad| (and so that noise) low
    x = leaf(_normal(rng, (1, 4, 8, 8), 0.1))
    return (lambda: ops.l2_norm_per_image(x)), [x]


def _pad_zero(rng):
    x = leaf(_normal(rng, (1, 4, 6, 6)))
    return (lambda: ops.pad_zero(x, 1, 2, 0, 1)), [x]


def _crop_window(rng):
    x = leaf(_normal(rng, (1, 4, 8, 8)))
    return (lambda: ops.crop_window(x, 1, 2, 5, 4)), [x]


def _conv(k, stride, pad, cin=2, cout=3, size=6, bias=True):
    def build(rng):
        spec = ops.Conv2dSpec(cin, cout, k, stride, pad, bias)
        x = leaf(_normal(rng, (1, cin, size, size)))
        w = leaf(_normal(rng, (cout, cin, k, k), 0.5))
        b = leaf(_normal(rng, cout)) if bias else None
        leaves = [x, w] + ([b] if bias else [])
        return (lambda: ops.conv2d(x, spec, w, b)), leaves
    return build


def _conv_transpose(k, stride, pad, cin=3, cout=2, size=4):
    def build(rng):
        spec = ops.ConvTranspose2dSpec(cin, cout, k, stride, pad)
        x = leaf(_normal(rng, (1, cin, size, size)))
        w = leaf(_normal(rng, (cin, cout, k, k), 0.5))
        b = leaf(_normal(rng, cout))
        return (lambda: ops.conv2d_transpose(x, spec, w, b)), [x, w, b]
    return build


def _batch_norm(training):
    def build(rng):
        x = leaf(_normal(rng, (1, 4, 8, 8), 2.0) + 0.5)
        gamma, beta = leaf(rng.uniform(0.5, 1.5, 4)), leaf(_normal(rng, 4))
        rm, rv = Node(_normal(rng, 4).astype(DTYPE)), Node(rng.uniform(0.5, 2, 4).astype(DTYPE))
        snapshot = (rm.value.copy(), rv.value.copy())

        def forward():
            # reset running stats so every evaluation sees the same state
            rm.value[...], rv.value[...] = snapshot
            return ops.batch_norm(x, gamma, beta, training, rm, rv)

        return forward, [x, gamma, beta]
    return build


def _grayscale(rng):
    x = leaf(_normal(rng, (1, 3, 8, 8)))
    return (lambda: ops.grayscale(x)), [x]


def _gaussian_blur(rng):
    x = leaf(_normal(rng, (1, 3, 8, 8)))
    kernel = ops.build_gaussian_kernel(radius=3)
    return (lambda: ops.gaussian_blur(x, kernel)), [x]


def _images(rng, shape=(1, 3, 8, 8)):
    return rng.uniform(0.1, 0.9, shape)


def _color_loss(rng):
    x, y = leaf(_images(rng)), leaf(_images(rng))
    kernel = ops.build_gaussian_kernel(radius=3)
    return (lambda: losses.color_loss(x, y, kernel)), [x, y]


def _content_loss(squared):
    def build(rng):
        fe = models.tiny_feature_extractor("relu2")
        x, y = leaf(_images(rng)), Node(_images(rng).astype(DTYPE))
        return (lambda: losses.content_loss(fe, x, y, squared=squared)), [x]
    return build


def _features(rng):
    fe = models.tiny_feature_extractor("relu2")
    x = leaf(_images(rng))
    return (lambda: models.extract_features(fe, x)), [x]


def _small_discriminator(rng):
    cfg = models.DiscriminatorConfig(channels=(4, 6, 8), strides=(2, 2, 2), batch_norm_layers=(1,))
    d = models.build_discriminator(cfg, rng)
    for p in d.parameters():
        # larger weights than the training init so the logistic head is not flat
        p.value *= 25
    return d


def _texture_generator(rng):
    d = _small_discriminator(rng)
    x = leaf(_images(rng))
    return (lambda: losses.texture_loss_generator(d, x)), [x] + d.parameters()


def _texture_discriminator(rng):
    d = _small_discriminator(rng)
    real, fake = leaf(_images(rng)), leaf(_images(rng))
    return (lambda: losses.texture_loss_discriminator(d, real, fake)), [real, fake] + d.parameters()


def _tv(literal):
    def build(rng):
        x = leaf(_images(rng))
        return (lambda: losses.tv_loss(x, literal=literal)), [x]
    return build


def _total_loss(rng):
    parts = [leaf(rng.uniform(0, 1, (1, 1, 1, 1))) for _ in range(4)]
    return (lambda: losses.total_loss(*parts)[0]), parts


def _residual_block(rng):
    block = models.ResidualBlock(4, 3, rng)
    assign_names(block)
    # init weights (std ~0.005) are below the step size; BN would make the
    # difference quotient curvature-dominated
    for conv in (block.conv1, block.conv2):
        conv.weight.value[...] = _normal(rng, conv.weight.shape, 0.3)
    x = leaf(_normal(rng, (1, 4, 6, 6)))
    return (lambda: block(x)), [x] + block.parameters()


CHECKS: dict[str, Callable] = {
    "add": _binary("add"),
    "sub": _binary("sub"),
    "mul": _binary("mul"),
    "scale": _scale,
    "channel_affine": _channel_affine,
    "square": _unary("square"),
    "log": _log,
    "clamp": _clamp,
    "sigmoid": _unary("sigmoid"),
    "relu": _unary("relu", _away_from_zero),
    "leaky_relu": _unary("leaky_relu", _away_from_zero, slope=0.2),
    "prelu": _prelu,
    "sum_all": _unary("sum_all"),
    "mean_all": _unary("mean_all"),
    "sum_per_image": _unary("sum_per_image"),
    "l2_norm_per_image": _l2_norm,
    "global_avg_pool": _unary("global_avg_pool"),
    "max_pool2d": _unary("max_pool2d", _distinct),
    "diff_h": _unary("diff_h"),
    "diff_v": _unary("diff_v"),
    "pad_zero": _pad_zero,
    "crop_window": _crop_window,
    "conv2d_k3_s1": _conv(3, 1, 1),
    "conv2d_k4_s2": _conv(4, 2, 1),
    "conv2d_k3_s2_nobias": _conv(3, 2, 1, bias=False),
    "conv2d_transpose_k4_s2": _conv_transpose(4, 2, 1),
    "conv2d_transpose_k3_s2": _conv_transpose(3, 2, 0),
    "batch_norm_train": _batch_norm(True),
    "batch_norm_eval": _batch_norm(False),
    "grayscale": _grayscale,
    "gaussian_blur": _gaussian_blur,
    "extract_features": _features,
    "residual_block": _residual_block,
    "color_loss": _color_loss,
    "content_loss": _content_loss(False),
    "content_loss_squared": _content_loss(True),
    "texture_loss_generator": _texture_generator,
    "texture_loss_discriminator": _texture_discriminator,
    "tv_loss": _tv(False),
    "tv_loss_literal": _tv(True),
    "total_loss": _total_loss,
}


# ---------------------------------------------------------------- runner

def _projection(out: Node, r: np.ndarray) -> float:
    return float((out.value.astype(np.float64) * r).sum())


@contextlib.contextmanager
def _rectifier_probe():
    """Record min |pre-activation| over every rectifier call inside the block."""
    margins = []
    originals = {n: getattr(ops, n) for n in RECTIFIERS}

    def wrap(fn):
        def probe(x, *args, **kwargs):
            margins.append(float(np.abs(x.value).min()))
            return fn(x, *args, **kwargs)
        return probe

    for n, fn in originals.items():
        setattr(ops, n, wrap(fn))
    try:
        yield margins
    finally:
        for n, fn in originals.items():
            setattr(ops, n, fn)


def _draw(name: str, seed: int):
    """First problem instance for ``seed`` whose rectifiers are clear of their kinks."""
    for draw in range(MAX_DRAWS):
        rng = make_rng(seed) if draw == 0 else np.random.Generator(np.random.PCG64([seed, draw]))
        forward, leaves = CHECKS[name](rng)
        with _rectifier_probe() as margins:
            forward()
        if not margins or min(margins) >= KINK_MARGIN:
            return rng, forward, leaves, draw
    raise RuntimeError(f"{name}: no kink-free draw in {MAX_DRAWS} attempts")


def run_check(name: str, seed: int = 0, eps: float = EPS) -> CheckResult:
    rng, forward, leaves, draw = _draw(name, seed)
    out = forward()
    r = rng.standard_normal(out.shape)

    for p in leaves:
        p.grad = None
    backward(ops.sum_all(ops.mul(out, constant(r.astype(DTYPE)))))
    ad = [p.grad.astype(np.float64).copy() for p in leaves]

    fd = []
    for p in leaves:
        g = np.zeros(p.value.shape)
        flat, gflat = p.value.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = _projection(forward(), r)
            flat[i] = orig - eps
            down = _projection(forward(), r)
            flat[i] = orig
            # use the step actually representable in f32
            gflat[i] = (up - down) / (float(DTYPE(orig + eps)) - float(DTYPE(orig - eps)))
        fd.append(g)

    num = max(float(np.abs(a - f).max()) for a, f in zip(ad, fd))
    den = max(float(np.abs(f).max()) for f in fd)
    err = num / den if den > 0 else num
    return CheckResult(name, seed, err, draw)


def run_suite(seeds=DEFAULT_SEEDS, names=None) -> list[CheckResult]:
    return [run_check(n, s) for n in (names or CHECKS) for s in seeds]
