"""Adversarial training: alternating discriminator and generator Adam steps."""
from __future__ import annotations

import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import config as runcfg
from . import losses, ops
from .autodiff import backward, constant, no_grad, zero_grads
from .data import PatchPair, batch
from .layers import BatchNorm2d
from .losses import LossBreakdown, LossWeights
from .metrics import MetricReport, evaluate
from .models import (DiscriminatorConfig, GeneratorConfig, build_discriminator, build_generator,
                     save_model, tiny_feature_extractor, vgg19_feature_extractor)

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


class Adam:
    """Bias-corrected Adam over a fixed, ordered parameter list."""

    def __init__(self, params, lr=5e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = [p for p in params if p.trainable]
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.step_count = 0

    def zero_grad(self):
        zero_grads(self.params)

    def step(self):
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                raise TrainingError(f"non-finite gradient in parameter {p.name!r}")
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        lr_t = self.lr * math.sqrt(1 - b2 ** t) / (1 - b1 ** t)
        # folded form of lr * m_hat / (sqrt(v_hat) + eps)
        eps_t = self.eps * math.sqrt(1 - b2 ** t)
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            p.value -= (lr_t * m / (np.sqrt(v) + eps_t)).astype(p.value.dtype)


@dataclass
class TrainConfig:
    iterations: int = 500
    batch_size: int = 8
    weights: LossWeights = field(default_factory=LossWeights)
    gen: GeneratorConfig = field(default_factory=GeneratorConfig)
    disc: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    seed: int = 0
    checkpoint_every: int = 0
    eval_every: int = 0
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    color_radius: int = 10
    color_sigma_squared: bool = False
    tv_literal: bool = False
    content_squared: bool = False
    feature_kind: str = "tiny_fixed"
    feature_layer: str = "relu3"
    feature_weights: str = ""

    def validate(self):
        if self.iterations < 1 or self.batch_size < 1:
            raise ValueError("iterations and batch_size must be >= 1")
        self.gen.validate()
        self.disc.validate()
        return self

    @classmethod
    def from_run(cls, cfg: dict) -> "TrainConfig":
        return cls(
            iterations=cfg["iterations"], batch_size=cfg["batch_size"],
            weights=runcfg.loss_weights(cfg), gen=runcfg.generator_config(cfg),
            disc=runcfg.discriminator_config(cfg), seed=cfg["seed"],
            checkpoint_every=cfg["checkpoint_every"], eval_every=cfg["eval_every"],
            lr=cfg["lr"], beta1=cfg["beta1"], beta2=cfg["beta2"], eps=cfg["eps"],
            color_radius=cfg["loss.color_radius"], color_sigma_squared=cfg["loss.color_sigma_squared"],
            tv_literal=cfg["loss.tv_literal"], content_squared=cfg["loss.content_squared"],
            feature_kind=cfg["features.kind"], feature_layer=cfg["features.layer"],
            feature_weights=cfg["features.weights"],
        )

    def run_keys(self) -> dict:
        """This config as flat run-config keys (for manifests and hashing)."""
        keys = {"seed": self.seed, "iterations": self.iterations, "batch_size": self.batch_size,
                "checkpoint_every": self.checkpoint_every, "eval_every": self.eval_every,
                "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
                "loss.color_radius": self.color_radius, "loss.color_sigma_squared": self.color_sigma_squared,
                "loss.tv_literal": self.tv_literal, "loss.content_squared": self.content_squared,
                "features.kind": self.feature_kind, "features.layer": self.feature_layer,
                "features.weights": self.feature_weights}
        keys.update({f"loss.{k}": getattr(self.weights, k) for k in ("content", "texture", "color", "tv")})
        keys.update(runcfg.generator_keys(self.gen))
        keys.update({f"disc.{k}": tuple(v) if isinstance(v, (list, tuple)) else v
                     for k, v in vars(self.disc).items()})
        return keys


@dataclass
class LogEntry:
    iteration: int
    losses: LossBreakdown
    d_loss: float
    wall_ms: float

    HEADER = ("iteration",) + LossBreakdown.COLUMNS + ("d_loss", "wall_ms")

    def line(self, sep: str = "\t") -> str:
        vals = [str(self.iteration)] + [f"{v:.6g}" for v in self.losses.fields()]
        vals += [f"{self.d_loss:.6g}", f"{self.wall_ms:.1f}"]
        return sep.join(vals)


@dataclass
class TrainResult:
    generator: object
    discriminator: object
    log: list
    evals: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)


def build_feature_extractor(cfg: TrainConfig):
    if cfg.feature_kind == "tiny_fixed":
        return tiny_feature_extractor(cfg.feature_layer)
    if cfg.feature_kind == "vgg19_loaded":
        if not cfg.feature_weights:
            raise ValueError("features.kind = vgg19_loaded needs features.weights")
        return vgg19_feature_extractor(cfg.feature_weights, cfg.feature_layer)
    raise ValueError(f"unknown feature extractor kind {cfg.feature_kind!r}")


class frozen_bn_stats:
    """Use batch statistics without touching running averages (discriminator in G-steps)."""

    def __init__(self, model):
        self.norms = [m for m in model.modules() if isinstance(m, BatchNorm2d)]

    def __enter__(self):
        self.saved = [(n.running_mean.value.copy(), n.running_var.value.copy()) for n in self.norms]

    def __exit__(self, *exc):
        for n, (m, v) in zip(self.norms, self.saved):
            n.running_mean.value[...] = m
            n.running_var.value[...] = v


def write_checkpoint(out_dir, iteration: int, gen, disc, cfg: TrainConfig) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    gpath = out / f"generator_{iteration:06d}.fpie"
    save_model(gen, gpath)
    save_model(disc, out / f"discriminator_{iteration:06d}.fpie")
    keys = cfg.run_keys()
    manifest = {"iteration": iteration, "seed": cfg.seed, "config_hash": runcfg.config_hash(keys)}
    text = "".join(f"{k} = {v}\n" for k, v in manifest.items())
    text += runcfg.dump(runcfg.generator_keys(cfg.gen))
    gpath.with_suffix(".manifest").write_text(text, encoding="utf-8")
    return gpath


def read_manifest(weights_path) -> dict:
    """Parse a checkpoint's sidecar manifest: generator keys plus iteration/seed/hash."""
    path = Path(weights_path).with_suffix(".manifest")
    if not path.exists():
        raise FileNotFoundError(f"no manifest next to {weights_path} (expected {path})")
    info, gen = {}, {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if "=" not in line:
            continue
        k, v = (s.strip() for s in line.split("=", 1))
        if k.startswith("gen."):
            gen[k] = runcfg.parse_value(k, v)
        else:
            info[k] = v
    info["gen"] = runcfg.generator_config({**runcfg.DEFAULTS, **gen})
    return info


def evaluate_generator(gen, pairs) -> MetricReport:
    """Eval-mode metrics of gen(phone) against dslr."""
    gen.eval()
    try:
        with no_grad():
            outs = [(gen(p.phone).value, p.dslr) for p in pairs]
    finally:
        gen.train()
    return evaluate(outs)


def train(cfg: TrainConfig, data, test=None, out_dir=None, log_path=None, extractor=None) -> TrainResult:
    """Run ``cfg.iterations`` alternating D/G steps on ``data`` (a sequence of PatchPair).

    Each iteration takes one seeded batch, then (1) updates the discriminator on
    real DSLR vs generated images (skipped when the texture weight is 0) and
    (2) updates the generator on the weighted total loss.
    """
    cfg.validate()
    data = list(data)
    if not data:
        raise ValueError("training needs a non-empty dataset")
    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    g_rng, d_rng, b_rng = (np.random.Generator(np.random.PCG64(s)) for s in seeds)
    gen = build_generator(cfg.gen, g_rng).train()
    disc = build_discriminator(cfg.disc, d_rng).train()
    fe = extractor or build_feature_extractor(cfg)
    kernel = ops.build_gaussian_kernel(radius=cfg.color_radius, sigma_squared=cfg.color_sigma_squared)
    g_opt = Adam(gen.parameters(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    d_opt = Adam(disc.parameters(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    w = cfg.weights
    adversarial = w.texture != 0
    batches = batch(data, cfg.batch_size, b_rng)
    result = TrainResult(gen, disc, [])
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    if log_fh:
        log_fh.write("\t".join(LogEntry.HEADER) + "\n")
    try:
        for it in range(1, cfg.iterations + 1):
            t0 = time.perf_counter()
            phone, dslr, ids = next(batches)
            enhanced = gen(phone)

            d_val = 0.0
            if adversarial:
                d_opt.zero_grad()
                d_loss = losses.texture_loss_discriminator(disc, dslr, enhanced.detach())
                backward(d_loss)
                d_opt.step()
                d_val = d_loss.item()

            g_opt.zero_grad()
            if adversarial:
                with frozen_bn_stats(disc):
                    tex = losses.texture_loss_generator(disc, enhanced)
            else:
                tex = constant(np.zeros((1, 1, 1, 1), np.float32))
            content = losses.content_loss(fe, enhanced, dslr, squared=cfg.content_squared)
            color = losses.color_loss(enhanced, dslr, kernel)
            tv = losses.tv_loss(enhanced, literal=cfg.tv_literal)
            total, parts = losses.total_loss(content, tex, color, tv, w)
            if not math.isfinite(parts.total):
                raise TrainingError(f"non-finite total loss at iteration {it}; batch ids: {ids}")
            backward(total)
            g_opt.step()

            entry = LogEntry(it, parts, d_val, 1000 * (time.perf_counter() - t0))
            result.log.append(entry)
            if log_fh:
                log_fh.write(entry.line() + "\n")
            if cfg.eval_every and test and it % cfg.eval_every == 0:
                report = evaluate_generator(gen, test)
                result.evals.append((it, report))
                log.info("iteration %d: %s", it, report)
            if out_dir and (it == cfg.iterations or (cfg.checkpoint_every and it % cfg.checkpoint_every == 0)):
                result.checkpoints.append(write_checkpoint(out_dir, it, gen, disc, cfg))
    finally:
        if log_fh:
            log_fh.close()
    return result
