"""Flat ``key = value`` run configuration.

Grammar: one ``key = value`` per line, ``#`` starts a comment, blank lines
ignored. Booleans are ``true/false/yes/no/1/0``; tuples are comma-separated
integers. Unknown keys are errors. Every key in :data:`DEFAULTS` is valid.
"""
from __future__ import annotations

import hashlib
import os
from dataclasses import fields

from .losses import LossWeights
from .models import DiscriminatorConfig, GeneratorConfig

DEFAULTS = {
    "seed": 0,
    "threads": 1,
    "deterministic": True,
    "out_dir": "runs/latest",
    "iterations": 500,
    "batch_size": 8,
    "checkpoint_every": 0,
    "eval_every": 0,
    "lr": 5e-4,
    "beta1": 0.9,
    "beta2": 0.999,
    "eps": 1e-8,
    "loss.content": 1.0,
    "loss.texture": 0.4,
    "loss.color": 0.1,
    "loss.tv": 400.0,
    "loss.color_sigma_squared": False,
    "loss.color_radius": 10,
    "loss.tv_literal": False,
    "loss.content_squared": False,
    "features.kind": "tiny_fixed",
    "features.layer": "relu3",
    "features.weights": "",
    "gen.variant": "strided",
    "gen.kernel": 3,
    "gen.strided_kernel": 4,
    "gen.base_channels": 16,
    "gen.max_channels": 64,
    "gen.blocks": 2,
    "gen.use_prelu": False,
    "gen.batch_norm": True,
    "gen.skip_preactivation": True,
    "disc.channels": (48, 96, 128, 192),
    "disc.strides": (2, 2, 2, 2),
    "disc.kernel": 4,
    "disc.head_kernel": 3,
    "disc.leaky_slope": 0.2,
    "disc.batch_norm_layers": (1, 2, 3),
    "data.root": "",
    "data.synthetic_count": 256,
    "data.synthetic_size": 64,
    "data.test_count": 16,
    "data.blur_sigma": 1.0,
    "data.saturation_scale": 0.7,
    "data.noise_sigma": 0.02,
    "eval.mode": "luma",
    "bench.repeats": 5,
}

_TRUE = {"true", "yes", "1", "on"}
_FALSE = {"false", "no", "0", "off"}


class ConfigError(ValueError):
    pass


def parse_value(key: str, text: str):
    if key not in DEFAULTS:
        raise ConfigError(f"unknown config key {key!r}")
    default = DEFAULTS[key]
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None
    return text


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def parse_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        try:
            out[key] = parse_value(key, val)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return out


def load(path: str | os.PathLike | None = None, overrides: dict | None = None) -> dict:
    """Defaults, then the file at ``path``, then ``overrides``."""
    cfg = dict(DEFAULTS)
    if path:
        with open(path, encoding="utf-8") as fh:
            cfg.update(parse_text(fh.read(), str(path)))
    for key, val in (overrides or {}).items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        cfg[key] = parse_value(key, val) if isinstance(val, str) else val
    return cfg


def dump(cfg: dict) -> str:
    return "".join(f"{k} = {format_value(v)}\n" for k, v in cfg.items())


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(dump(dict(sorted(cfg.items()))).encode()).hexdigest()[:16]


def _section(cfg: dict, prefix: str, cls):
    names = {f.name for f in fields(cls)}
    return cls(**{k[len(prefix):]: v for k, v in cfg.items() if k.startswith(prefix) and k[len(prefix):] in names})


def generator_config(cfg: dict) -> GeneratorConfig:
    return _section(cfg, "gen.", GeneratorConfig)


def discriminator_config(cfg: dict) -> DiscriminatorConfig:
    return _section(cfg, "disc.", DiscriminatorConfig)


def loss_weights(cfg: dict) -> LossWeights:
    return _section(cfg, "loss.", LossWeights)


def generator_keys(gen: GeneratorConfig) -> dict:
    return {f"gen.{k}": v for k, v in gen.to_dict().items()}
