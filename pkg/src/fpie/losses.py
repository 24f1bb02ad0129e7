"""Training losses. Every loss returns a (1, 1, 1, 1) Node averaged over the batch."""
from __future__ import annotations

from dataclasses import asdict, dataclass

from . import ops
from .autodiff import Node, constant
from .models import FeatureExtractor, extract_features

TEXTURE_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    content: float = 1.0
    texture: float = 0.4
    color: float = 0.1
    tv: float = 400.0


@dataclass
class LossBreakdown:
    """Raw component values with their weights; ``weighted`` and ``total`` derive from them."""

    content: float
    texture: float
    color: float
    tv: float
    weights: LossWeights
    total: float

    @property
    def weighted(self) -> dict[str, float]:
        w = asdict(self.weights)
        return {k: w[k] * getattr(self, k) for k in ("content", "texture", "color", "tv")}

    COLUMNS = ("content", "texture", "color", "tv",
               "w_content", "w_texture", "w_color", "w_tv", "total")

    def fields(self) -> list[float]:
        wt = self.weighted
        return [self.content, self.texture, self.color, self.tv,
                wt["content"], wt["texture"], wt["color"], wt["tv"], self.total]


def _batch_mean(per_image: Node) -> Node:
    return ops.scale(ops.sum_all(per_image), 1.0 / per_image.shape[0])


def _same_shape(x: Node, y: Node):
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")


def color_loss(x, y, kernel: ops.GaussianKernel) -> Node:
    """Squared L2 distance between Gaussian-blurred images, summed per image."""
    x, y = constant(x), constant(y)
    _same_shape(x, y)
    d = ops.sub(ops.gaussian_blur(x, kernel), ops.gaussian_blur(y, kernel))
    return _batch_mean(ops.sum_per_image(ops.square(d)))


def content_loss(fe: FeatureExtractor, enhanced, target, squared: bool = False) -> Node:
    """||psi(enhanced) - psi(target)|| / (C H W) on the extractor's feature map.

    The target's features carry no gradient. ``squared`` switches to the
    squared norm.
    """
    enhanced, target = constant(enhanced), constant(target)
    _same_shape(enhanced, target)
    fa = extract_features(fe, enhanced)
    fb = extract_features(fe, target.detach())
    _, C, H, W = fa.shape
    d = ops.sub(fa, fb)
    per_image = ops.sum_per_image(ops.square(d)) if squared else ops.l2_norm_per_image(d)
    return ops.scale(_batch_mean(per_image), 1.0 / (C * H * W))


def _log_prob(p: Node) -> Node:
    return ops.log(ops.clamp(p, TEXTURE_EPS, 1 - TEXTURE_EPS))


def texture_loss_generator(d, enhanced) -> Node:
    """-mean log D(gray(enhanced))."""
    prob = d(ops.grayscale(enhanced))
    return ops.scale(_batch_mean(_log_prob(prob)), -1.0)


def texture_loss_discriminator(d, real, fake) -> Node:
    """Binary cross-entropy with real -> 1 and fake -> 0."""
    p_real = d(ops.grayscale(real))
    p_fake = d(ops.grayscale(fake))
    one_minus = ops.add(ops.scale(p_fake, -1.0), 1.0)
    ll = ops.add(_batch_mean(_log_prob(p_real)), _batch_mean(_log_prob(one_minus)))
    return ops.scale(ll, -1.0)


def tv_loss(x, literal: bool = False) -> Node:
    """(sum dx^2 + sum dy^2) / (C H W) per image.

    With ``literal`` the unsquared norm of the summed difference fields
    ``||dx + dy||`` over the common (H-1) x (W-1) grid is used instead.
    """
    x = constant(x)
    _, C, H, W = x.shape
    dh, dv = ops.diff_h(x), ops.diff_v(x)
    if literal:
        s = ops.add(ops.crop_window(dh, 0, 0, H - 1, W - 1), ops.crop_window(dv, 0, 0, H - 1, W - 1))
        per_image = ops.l2_norm_per_image(s)
    else:
        per_image = ops.add(ops.sum_per_image(ops.square(dh)), ops.sum_per_image(ops.square(dv)))
    return ops.scale(_batch_mean(per_image), 1.0 / (C * H * W))


def total_loss(content: Node, texture: Node, color: Node, tv: Node,
               w: LossWeights = LossWeights()) -> tuple[Node, LossBreakdown]:
    parts = [constant(p) for p in (content, texture, color, tv)]
    for p in parts:
        if p.value.size != 1:
            raise ValueError(f"loss components must be scalars, got shape {p.shape}")
    coeffs = (w.content, w.texture, w.color, w.tv)
    total = ops.scale(parts[0], coeffs[0])
    for p, c in zip(parts[1:], coeffs[1:]):
        total = ops.add(total, ops.scale(p, c))
    raw = [p.item() for p in parts]
    return total, LossBreakdown(*raw, weights=w, total=total.item())
