"""Generators and discriminator, plus the content-loss feature extractor."""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import ops, weightfile
from .autodiff import Node, Parameter, constant
from .layers import INIT_GAIN, Activation, BatchNorm2d, Conv2d, ConvTranspose2d, Module, assign_names
from .tensor import DTYPE, Rng, make_rng

FEATURE_SEED = 2018
# ImageNet statistics expected by externally trained VGG weights
VGG_MEAN = (0.485, 0.456, 0.406)
VGG_STD = (0.229, 0.224, 0.225)
VGG19_LAYERS = (
    ("conv1_1", "conv1_2"),
    ("conv2_1", "conv2_2"),
    ("conv3_1", "conv3_2", "conv3_3", "conv3_4"),
    ("conv4_1", "conv4_2", "conv4_3", "conv4_4"),
    ("conv5_1", "conv5_2", "conv5_3", "conv5_4"),
)


@dataclass(frozen=True)
class GeneratorConfig:
    """Architecture descriptor shared by both generator variants.

    ``baseline`` uses ``kernel`` everywhere and ``base_channels`` throughout
    (``max_channels`` must equal it). ``strided`` uses ``strided_kernel`` for
    the two downsampling and two upsampling layers and grows from
    ``base_channels`` to ``max_channels == 4 * base_channels``.
    """

    variant: str = "strided"
    kernel: int = 3
    strided_kernel: int = 4
    base_channels: int = 16
    max_channels: int = 64
    blocks: int = 2
    use_prelu: bool = False
    batch_norm: bool = True
    skip_preactivation: bool = True

    @classmethod
    def baseline(cls, kernel=3, channels=64, blocks=4, **kw):
        return cls("baseline", kernel, kernel, channels, channels, blocks, **kw)

    @classmethod
    def strided(cls, kernel=3, strided_kernel=4, base_channels=16, blocks=2, **kw):
        return cls("strided", kernel, strided_kernel, base_channels, 4 * base_channels, blocks, **kw)

    def validate(self, min_blocks: int = 1):
        if self.variant not in ("baseline", "strided"):
            raise ValueError(f"unknown generator variant {self.variant!r}")
        if self.blocks < min_blocks:
            raise ValueError(f"blocks must be >= {min_blocks}, got {self.blocks}")
        if self.kernel < 1 or self.strided_kernel < 2 or self.base_channels < 1:
            raise ValueError(f"invalid generator config {self}")
        if self.variant == "strided" and self.max_channels != 4 * self.base_channels:
            raise ValueError("strided variant needs max_channels == 4 * base_channels "
                             f"(got {self.base_channels}-{self.max_channels})")
        if self.variant == "baseline" and self.max_channels != self.base_channels:
            raise ValueError("baseline variant uses a single channel width")
        return self

    @property
    def kernel_label(self) -> str:
        if self.variant == "strided" and self.strided_kernel != self.kernel:
            return f"{self.kernel}-{self.strided_kernel}"
        return str(self.kernel)

    @property
    def channel_label(self) -> str:
        if self.variant == "strided":
            return f"{self.base_channels}-{self.max_channels}"
        return str(self.base_channels)

    @property
    def label(self) -> str:
        extra = " prelu" if self.use_prelu else ""
        return f"{self.variant} {{{self.kernel_label}, {self.channel_label}, {self.blocks}}}{extra}"

    @property
    def multiple(self) -> int:
        """Spatial sizes must be divisible by this."""
        return 4 if self.variant == "strided" else 1

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class DiscriminatorConfig:
    channels: tuple = (48, 96, 128, 192)
    strides: tuple = (2, 2, 2, 2)
    kernel: int = 4
    head_kernel: int = 3
    leaky_slope: float = 0.2
    batch_norm_layers: tuple = (1, 2, 3)

    def validate(self):
        if len(self.channels) != len(self.strides) or not self.channels:
            raise ValueError("discriminator needs one stride per conv layer")
        if any(c < 1 for c in self.channels) or any(s not in (1, 2) for s in self.strides):
            raise ValueError(f"invalid discriminator config {self}")
        return self


class ResidualBlock(Module):
    """conv - BN - act - conv - BN, plus identity skip."""

    def __init__(self, channels, kernel, rng, batch_norm=True, use_prelu=False):
        self.conv1 = Conv2d(channels, channels, kernel, rng)
        if batch_norm:
            self.bn1 = BatchNorm2d(channels)
        self.act = Activation(channels, use_prelu)
        self.conv2 = Conv2d(channels, channels, kernel, rng)
        if batch_norm:
            self.bn2 = BatchNorm2d(channels)

    def forward(self, x):
        y = self.conv1(x)
        if hasattr(self, "bn1"):
            y = self.bn1(y)
        y = self.conv2(self.act(y))
        if hasattr(self, "bn2"):
            y = self.bn2(y)
        return ops.add(x, y)


class Generator(Module):
    config: GeneratorConfig

    def __call__(self, x) -> Node:
        x = constant(x)
        if x.shape[1] != 3:
            raise ValueError(f"generator expects 3-channel input, got {x.shape[1]}")
        m = self.config.multiple
        if x.shape[2] % m or x.shape[3] % m:
            raise ValueError(f"input {x.shape[2]}x{x.shape[3]} must be divisible by {m}; use pad_to_multiple")
        residual = self.forward(x)
        # global input skip; zeroed weights give the identity on [0, 1] images
        return ops.clamp(ops.add(x, residual), 0.0, 1.0)


class BaselineGenerator(Generator):
    """Full-resolution residual network: head, residual blocks, two tail convs."""

    def __init__(self, cfg: GeneratorConfig, rng: Rng):
        self.config = cfg
        C, k = cfg.base_channels, cfg.kernel
        self.head = Conv2d(3, C, k, rng)
        self.head_act = Activation(C, cfg.use_prelu)
        self.blocks = [ResidualBlock(C, k, rng, cfg.batch_norm, cfg.use_prelu) for _ in range(cfg.blocks)]
        self.tail1 = Conv2d(C, C, k, rng)
        self.tail_act = Activation(C, cfg.use_prelu)
        self.tail2 = Conv2d(C, 3, k, rng)

    def forward(self, x):
        h = self.head_act(self.head(x))
        for block in self.blocks:
            h = block(h)
        return self.tail2(self.tail_act(self.tail1(h)))


class StridedGenerator(Generator):
    """Encoder-decoder: two stride-2 convs, residual blocks at 1/4 resolution,
    two transposed convs with same-resolution skip additions."""

    def __init__(self, cfg: GeneratorConfig, rng: Rng):
        self.config = cfg
        C, k, ks, p = cfg.base_channels, cfg.kernel, cfg.strided_kernel, cfg.use_prelu
        pad = (ks - 1) // 2
        self.head = Conv2d(3, C, k, rng)
        self.head_act = Activation(C, p)
        self.down1 = Conv2d(C, 2 * C, ks, rng, stride=2, padding=pad)
        self.down1_act = Activation(2 * C, p)
        self.down2 = Conv2d(2 * C, 4 * C, ks, rng, stride=2, padding=pad)
        self.down2_act = Activation(4 * C, p)
        self.blocks = [ResidualBlock(4 * C, k, rng, cfg.batch_norm, p) for _ in range(cfg.blocks)]
        self.up1 = ConvTranspose2d(4 * C, 2 * C, ks, rng)
        self.up1_act = Activation(2 * C, p)
        self.up2 = ConvTranspose2d(2 * C, C, ks, rng)
        self.up2_act = Activation(C, p)
        self.tail = Conv2d(C, 3, k, rng)

    def _merge(self, up, skip, act):
        if self.config.skip_preactivation:
            return act(ops.add(up, skip))
        return ops.add(act(up), skip)

    def forward(self, x):
        h0 = self.head_act(self.head(x))
        h1 = self.down1_act(self.down1(h0))
        h = self.down2_act(self.down2(h1))
        for block in self.blocks:
            h = block(h)
        h = self._merge(self.up1(h), h1, self.up1_act)
        h = self._merge(self.up2(h), h0, self.up2_act)
        return self.tail(h)


def build_generator(cfg: GeneratorConfig, rng: Rng) -> Generator:
    cfg.validate()
    model = (BaselineGenerator if cfg.variant == "baseline" else StridedGenerator)(cfg, rng)
    assign_names(model)
    return model


class Discriminator(Module):
    """Strided conv stack on grayscale images ending in a logistic unit per image."""

    def __init__(self, cfg: DiscriminatorConfig, rng: Rng):
        self.config = cfg
        cin = 1
        self.convs, self.norms = [], []
        for i, (c, s) in enumerate(zip(cfg.channels, cfg.strides)):
            self.convs.append(Conv2d(cin, c, cfg.kernel, rng, stride=s, padding=(cfg.kernel - 1) // 2))
            self.norms.append(BatchNorm2d(c) if i in cfg.batch_norm_layers else None)
            cin = c
        self.head = Conv2d(cin, 1, cfg.head_kernel, rng, stride=2, padding=(cfg.head_kernel - 1) // 2)

    def forward(self, x) -> Node:
        x = constant(x)
        if x.shape[1] != 1:
            raise ValueError(f"discriminator expects grayscale input, got {x.shape[1]} channels")
        h = x
        for conv, norm in zip(self.convs, self.norms):
            h = conv(h)
            if norm is not None:
                h = norm(h)
            h = ops.leaky_relu(h, self.config.leaky_slope)
        return ops.sigmoid(ops.global_avg_pool(self.head(h)))

    def named_parameters(self, prefix: str = ""):
        for i, conv in enumerate(self.convs):
            yield from conv.named_parameters(f"{prefix}conv{i}.")
            if self.norms[i] is not None:
                yield from self.norms[i].named_parameters(f"{prefix}bn{i}.")
        yield from self.head.named_parameters(f"{prefix}head.")

    def modules(self):
        yield self
        for m in self.convs + [n for n in self.norms if n is not None] + [self.head]:
            yield from m.modules()


def build_discriminator(cfg: DiscriminatorConfig, rng: Rng) -> Discriminator:
    cfg.validate()
    model = Discriminator(cfg, rng)
    assign_names(model)
    return model


@dataclass
class FeatureExtractor:
    """Frozen conv stack whose activations define the content loss.

    ``stages`` is a list of (layer_tag, weight, bias, stride, pool_after) in
    forward order; features are read at ``layer_tag``.
    """

    kind: str
    layer_tag: str
    stages: list = field(default_factory=list)
    normalize: bool = False

    def parameters(self) -> list[Parameter]:
        return [p for st in self.stages for p in st[1:3] if p is not None]

    def __call__(self, x) -> Node:
        return extract_features(self, x)


def tiny_feature_extractor(layer_tag: str = "relu3", seed: int = FEATURE_SEED) -> FeatureExtractor:
    """Three stride-2 3x3 conv + ReLU stages (32/64/128 channels), He-initialised from ``seed``."""
    rng = make_rng(seed)
    stages, cin = [], 3
    for i, c in enumerate((32, 64, 128), start=1):
        w = (rng.standard_normal((c, cin, 3, 3)) * np.sqrt(2.0 / (cin * 9))).astype(DTYPE)
        stages.append((f"relu{i}", Parameter(w, f"tiny.conv{i}.weight", trainable=False), None, 2, False))
        cin = c
    tags = [s[0] for s in stages]
    if layer_tag not in tags:
        raise ValueError(f"unknown layer tag {layer_tag!r}; expected one of {tags}")
    return FeatureExtractor("tiny_fixed", layer_tag, stages)


def vgg19_feature_extractor(path: str | os.PathLike, layer_tag: str = "relu5_4") -> FeatureExtractor:
    """Load VGG-19 conv weights named ``conv{b}_{i}.weight`` / ``.bias`` from a weight file.

    Only the layers up to ``layer_tag`` are read. Inputs in [0, 1] are
    normalised with ImageNet statistics; 2x2 max pooling follows each block.
    """
    tensors = weightfile.load(path)
    stages = []
    for block in VGG19_LAYERS:
        for j, name in enumerate(block):
            tag = "relu" + name[4:]
            try:
                w = tensors[f"{name}.weight"]
            except KeyError:
                raise weightfile.WeightFileError(f"missing tensor {name}.weight") from None
            b = tensors.get(f"{name}.bias")
            wp = Parameter(w, f"{name}.weight", trainable=False)
            bp = Parameter(b.reshape(-1), f"{name}.bias", trainable=False) if b is not None else None
            last_in_block = j == len(block) - 1
            stages.append((tag, wp, bp, 1, last_in_block))
            if tag == layer_tag:
                return FeatureExtractor("vgg19_loaded", layer_tag, stages, normalize=True)
    raise ValueError(f"unknown VGG-19 layer tag {layer_tag!r}")


def extract_features(fe: FeatureExtractor, x) -> Node:
    x = constant(x)
    if x.shape[1] != 3:
        raise ValueError(f"feature extractor expects 3 channels, got {x.shape[1]}")
    h = x
    if fe.normalize:
        h = ops.channel_affine(h, [1 / s for s in VGG_STD], [-m / s for m, s in zip(VGG_MEAN, VGG_STD)])
    for tag, w, b, stride, pool in fe.stages:
        k = w.value.shape[-1]
        spec = ops.Conv2dSpec(w.value.shape[1], w.value.shape[0], k, stride, (k - 1) // 2, b is not None)
        h = ops.relu(ops.conv2d(h, spec, w, b))
        if tag == fe.layer_tag:
            return h
        if pool:
            h = ops.max_pool2d(h)
    raise ValueError(f"layer {fe.layer_tag!r} not reached")


# ---------------------------------------------------------------- padding

@dataclass(frozen=True)
class CropSpec:
    height: int
    width: int

    def apply(self, x: np.ndarray) -> np.ndarray:
        return x[..., :self.height, :self.width]


def pad_to_multiple(x: np.ndarray, m: int) -> tuple[np.ndarray, CropSpec]:
    """Reflection-pad bottom/right so H and W are multiples of ``m``."""
    if m < 1:
        raise ValueError(f"multiple must be >= 1, got {m}")
    H, W = x.shape[-2:]
    Hp, Wp = -(-H // m) * m, -(-W // m) * m
    crop = CropSpec(H, W)
    if (Hp, Wp) == (H, W):
        return x, crop
    rows = ops.reflect_index(np.arange(Hp), H)
    cols = ops.reflect_index(np.arange(Wp), W)
    return np.ascontiguousarray(x[..., rows, :][..., cols]), crop


# ---------------------------------------------------------------- weights

def state_arrays(model: Module) -> dict[str, np.ndarray]:
    return {name: p.value for name, p in model.named_parameters()}


def save_model(model: Module, path: str | os.PathLike) -> None:
    weightfile.save(path, state_arrays(model))


def load_state(model: Module, tensors: dict[str, np.ndarray]) -> None:
    params = model.state()
    missing = sorted(set(params) - set(tensors))
    unexpected = sorted(set(tensors) - set(params))
    if missing or unexpected:
        raise weightfile.WeightFileError(f"weight names do not match model: missing {missing[:5]}, "
                                         f"unexpected {unexpected[:5]}")
    for name, p in params.items():
        arr = tensors[name]
        if arr.size != p.value.size:
            raise weightfile.WeightFileError(f"{name}: {arr.size} values for shape {p.value.shape}")
        p.value[...] = arr.reshape(p.value.shape)


def load_model(model: Module, path: str | os.PathLike) -> Module:
    load_state(model, weightfile.load(path))
    return model


def count_parameters(model: Module) -> int:
    return sum(p.value.size for p in model.parameters())


def enhance(model: Generator, image: np.ndarray) -> np.ndarray:
    """Run ``model`` in eval mode on an (n, 3, h, w) array of any size."""
    from .autodiff import no_grad

    was_training = model.training
    model.eval()
    try:
        padded, crop = pad_to_multiple(np.asarray(image, dtype=DTYPE), model.config.multiple)
        with no_grad():
            out = model(padded).value
    finally:
        model.train(was_training)
    return np.ascontiguousarray(crop.apply(out))
