"""Stateful layers holding named parameters."""
from __future__ import annotations

import math

import numpy as np

from . import ops
from .autodiff import Node, Parameter
from .tensor import DTYPE, Rng

INIT_GAIN = 0.02


def init_normal(shape, fan_in: int, rng: Rng, gain: float = INIT_GAIN) -> np.ndarray:
    """normal(0, gain * sqrt(2 / fan_in)), no truncation."""
    return (rng.standard_normal(size=shape) * (gain * math.sqrt(2.0 / fan_in))).astype(DTYPE)


class Module:
    """Minimal container: attributes that are Parameters or Modules are walked in insertion order."""

    training = True

    def named_parameters(self, prefix: str = ""):
        for key, val in vars(self).items():
            if isinstance(val, Parameter):
                yield prefix + key, val
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{prefix}{key}.")
            elif isinstance(val, list):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters() if p.trainable]

    def state(self) -> dict[str, Parameter]:
        """Every parameter and buffer by qualified name."""
        return dict(self.named_parameters())

    def modules(self):
        yield self
        for val in vars(self).values():
            if isinstance(val, Module):
                yield from val.modules()
            elif isinstance(val, list):
                for item in val:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def assign_names(module: Module, prefix: str = ""):
    for name, p in module.named_parameters(prefix):
        p.name = name


class Conv2d(Module):
    """Convolution; by default stride 1 keeps the spatial size ("same" padding,
    one extra bottom/right row for even kernels)."""

    def __init__(self, cin, cout, kernel, rng: Rng, stride=1, padding=None, bias=True, gain=INIT_GAIN):
        self.same_pad = None
        if padding is None:
            padding = (kernel - 1) // 2
            if stride == 1 and kernel % 2 == 0:
                self.same_pad = (padding, padding + 1)
                padding = 0
        self.spec = ops.Conv2dSpec(cin, cout, kernel, stride, padding, bias)
        fan_in = cin * kernel * kernel
        self.weight = Parameter(init_normal((cout, cin, kernel, kernel), fan_in, rng, gain), "weight")
        if bias:
            self.bias = Parameter(np.zeros(cout, DTYPE), "bias")

    def forward(self, x) -> Node:
        if self.same_pad is not None:
            lo, hi = self.same_pad
            x = ops.pad_zero(x if isinstance(x, Node) else ops.constant(x), lo, hi, lo, hi)
        return ops.conv2d(x, self.spec, self.weight, getattr(self, "bias", None))


class ConvTranspose2d(Module):
    """Learned upsampling by ``stride``.

    With the default padding the output is exactly ``stride`` times the input.
    When ``kernel - stride`` is odd no symmetric padding achieves that, so the
    full canvas is computed and a centred window is cut out of it.
    """

    def __init__(self, cin, cout, kernel, rng: Rng, stride=2, padding=None, bias=True, gain=INIT_GAIN):
        self.window = None
        if padding is None:
            padding = (kernel - stride) // 2
            if (kernel - stride) % 2:
                self.window = padding + 1
                padding = 0
        self.spec = ops.ConvTranspose2dSpec(cin, cout, kernel, stride, padding, bias)
        fan_in = cin * kernel * kernel // (stride * stride)
        self.weight = Parameter(init_normal((cin, cout, kernel, kernel), fan_in, rng, gain), "weight")
        if bias:
            self.bias = Parameter(np.zeros(cout, DTYPE), "bias")

    def forward(self, x) -> Node:
        y = ops.conv2d_transpose(x, self.spec, self.weight, getattr(self, "bias", None))
        if self.window is not None:
            h, w = x.shape[2] * self.spec.stride, x.shape[3] * self.spec.stride
            y = ops.crop_window(y, self.window, self.window, h, w)
        return y


class BatchNorm2d(Module):
    def __init__(self, channels):
        self.gamma = Parameter(np.ones(channels, DTYPE), "gamma")
        self.beta = Parameter(np.zeros(channels, DTYPE), "beta")
        self.running_mean = Parameter(np.zeros(channels, DTYPE), "running_mean", trainable=False)
        self.running_var = Parameter(np.ones(channels, DTYPE), "running_var", trainable=False)

    def forward(self, x) -> Node:
        return ops.batch_norm(x, self.gamma, self.beta, self.training, self.running_mean, self.running_var)


class Activation(Module):
    """ReLU, or PReLU with a learned per-channel slope (initialised to 0.25)."""

    def __init__(self, channels, use_prelu=False):
        if use_prelu:
            self.slope = Parameter(np.full(channels, 0.25, DTYPE), "slope")

    def forward(self, x) -> Node:
        if hasattr(self, "slope"):
            return ops.prelu(x, self.slope)
        return ops.relu(x)
