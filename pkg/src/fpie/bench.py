"""Cost model and timing harness for the generator architectures.

MAC and parameter counts are exact integers derived from a
:class:`GeneratorConfig` and an input shape; nothing is measured. One MAC is
one multiply-accumulate of a convolution: ``out_elems * in_channels * k^2`` for
a convolution, ``in_elems * out_channels * k^2`` for a transposed convolution
(every input pixel is scattered through the full kernel). Bias adds are not
counted.

Report JSON schema (``Frontier.to_json``)::

    {"shape": [n, c, h, w], "threads": int, "repeats": int, "baseline": str,
     "rows": [{"label", "variant", "kernel", "channels", "blocks",
               "macs", "params", "peak_mem_bytes",
               "wall_ms", "time_s", "psnr_db", "ms_ssim", "speedup"}],
     "plot": [[speedup, ms_ssim], ...]}

Unmeasured values are ``null``.
"""
from __future__ import annotations

import json
import math
import statistics
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import runtime
from .autodiff import no_grad
from .metrics import evaluate
from .models import GeneratorConfig, build_generator, enhance, load_model
from .tensor import make_rng

BYTES = 4
HD_SHAPE = (1, 3, 720, 1280)


@dataclass(frozen=True)
class LayerCost:
    name: str
    kind: str  # conv | tconv
    cin: int
    cout: int
    kernel: int
    in_hw: tuple
    out_hw: tuple
    macs: int
    params: int
    held: int = 0  # activation elements kept alive for later skips


def _conv(name, n, cin, cout, k, hw, stride=1, bn=False, prelu=False, held=0):
    pad = (k - 1) // 2
    # stride-1 layers use "same" padding, including even kernels
    out = hw if stride == 1 else tuple((s + 2 * pad - k) // stride + 1 for s in hw)
    if min(out) < 1:
        raise ValueError(f"{name}: input {hw} too small")
    macs = n * cout * out[0] * out[1] * cin * k * k
    params = cout * cin * k * k + cout + (2 * cout if bn else 0) + (cout if prelu else 0)
    return LayerCost(name, "conv", cin, cout, k, hw, out, macs, params, held)


def _tconv(name, n, cin, cout, k, hw, prelu=False, held=0):
    out = (2 * hw[0], 2 * hw[1])
    macs = n * cin * hw[0] * hw[1] * cout * k * k
    params = cin * cout * k * k + cout + (cout if prelu else 0)
    return LayerCost(name, "tconv", cin, cout, k, hw, out, macs, params, held)


def layer_plan(cfg: GeneratorConfig, shape=HD_SHAPE) -> list[LayerCost]:
    """Per-layer costs in execution order."""
    cfg.validate(min_blocks=0)
    n, c, h, w = shape
    if c != 3 or min(n, h, w) < 1:
        raise ValueError(f"invalid input shape {shape}")
    if h % cfg.multiple or w % cfg.multiple:
        raise ValueError(f"{cfg.variant} generator needs H, W divisible by {cfg.multiple}")
    C, k, bn, pr = cfg.base_channels, cfg.kernel, cfg.batch_norm, cfg.use_prelu
    full = (h, w)
    inp = n * 3 * h * w  # the input stays alive for the global skip
    plan = []
    if cfg.variant == "baseline":
        plan.append(_conv("head", n, 3, C, k, full, prelu=pr, held=inp))
        for b in range(cfg.blocks):
            block_in = inp + n * C * h * w
            plan.append(_conv(f"blocks.{b}.conv1", n, C, C, k, full, bn=bn, prelu=pr, held=block_in))
            plan.append(_conv(f"blocks.{b}.conv2", n, C, C, k, full, bn=bn, held=block_in))
        plan.append(_conv("tail1", n, C, C, k, full, prelu=pr, held=inp))
        plan.append(_conv("tail2", n, C, 3, k, full, held=inp))
        return plan
    ks = cfg.strided_kernel
    half, quarter = (h // 2, w // 2), (h // 4, w // 4)
    h0 = n * C * h * w
    h1 = n * 2 * C * half[0] * half[1]
    plan.append(_conv("head", n, 3, C, k, full, prelu=pr, held=inp))
    plan.append(_conv("down1", n, C, 2 * C, ks, full, stride=2, prelu=pr, held=inp))
    plan.append(_conv("down2", n, 2 * C, 4 * C, ks, half, stride=2, prelu=pr, held=inp + h0))
    for b in range(cfg.blocks):
        block_in = inp + h0 + h1 + n * 4 * C * quarter[0] * quarter[1]
        plan.append(_conv(f"blocks.{b}.conv1", n, 4 * C, 4 * C, k, quarter, bn=bn, prelu=pr, held=block_in))
        plan.append(_conv(f"blocks.{b}.conv2", n, 4 * C, 4 * C, k, quarter, bn=bn, held=block_in))
    plan.append(_tconv("up1", n, 4 * C, 2 * C, ks, quarter, prelu=pr, held=inp + h0 + h1))
    plan.append(_tconv("up2", n, 2 * C, C, ks, half, prelu=pr, held=inp + h0))
    plan.append(_conv("tail", n, C, 3, k, full, held=inp))
    return plan


def count_macs(cfg: GeneratorConfig, shape=HD_SHAPE) -> tuple[int, int]:
    """(MACs, trainable parameters) for one forward pass on ``shape``."""
    plan = layer_plan(cfg, shape)
    return sum(layer.macs for layer in plan), sum(layer.params for layer in plan)


def peak_memory_bytes(cfg: GeneratorConfig, shape=HD_SHAPE) -> int:
    """Weights plus the largest (input + output + held skips) over the layer sequence."""
    plan = layer_plan(cfg, shape)
    n = shape[0]
    weights = sum(layer.params for layer in plan)
    live = max(n * layer.cin * math.prod(layer.in_hw) + n * layer.cout * math.prod(layer.out_hw) + layer.held
               for layer in plan)
    return BYTES * (weights + live)


def measure(model, shape=HD_SHAPE, repeats: int = 5, threads: int = 1, seed: int = 0) -> list[float]:
    """Wall times in ms of ``repeats`` eval-mode forward passes, after one untimed warm-up."""
    if repeats < 3:
        raise ValueError(f"repeats must be >= 3, got {repeats}")
    x = make_rng(seed).random(shape, dtype=np.float32)
    model.eval()
    times = []
    with runtime.threads(threads), no_grad():
        model(x)
        for _ in range(repeats):
            t0 = time.perf_counter()
            model(x)
            times.append(1000 * (time.perf_counter() - t0))
    return times


def time_inference(model, shape=HD_SHAPE, repeats: int = 5, threads: int = 1) -> float:
    """Median wall time in ms."""
    return statistics.median(measure(model, shape, repeats, threads))


@dataclass
class BenchReport:
    label: str
    variant: str
    kernel: str
    channels: str
    blocks: int
    macs: int
    params: int
    peak_mem_bytes: int
    wall_ms: float | None = None
    psnr_db: float | None = None
    ms_ssim: float | None = None
    speedup: float | None = None

    @property
    def time_s(self) -> float | None:
        return None if self.wall_ms is None else self.wall_ms / 1000


TABLE_COLUMNS = ("Kernel size", "Channels", "Blocks", "Time (s)", "PSNR", "MS-SSIM", "Speedup",
                 "MACs", "Params", "Peak memory (MB)")
MACS_COLUMNS = ("Kernel size", "Channels", "Blocks", "MACs", "Params", "Peak memory (MB)")


def _cell(v, fmt):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "-"
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return format(v, fmt)


@dataclass
class Frontier:
    rows: list
    shape: tuple
    threads: int
    repeats: int
    baseline: int = 0
    macs_only: bool = False

    def table(self, sep: str = "\t") -> str:
        cols = MACS_COLUMNS if self.macs_only else TABLE_COLUMNS
        lines = [sep.join(cols)]
        for r in self.rows:
            mem = r.peak_mem_bytes / 2**20
            if self.macs_only:
                cells = [r.kernel, r.channels, str(r.blocks), str(r.macs), str(r.params), f"{mem:.1f}"]
            else:
                cells = [r.kernel, r.channels, str(r.blocks), _cell(r.time_s, ".3f"), _cell(r.psnr_db, ".4f"),
                         _cell(r.ms_ssim, ".4f"), _cell(r.speedup, ".2f"), str(r.macs), str(r.params), f"{mem:.1f}"]
            lines.append(sep.join(cells))
        return "\n".join(lines) + "\n"

    def plot_data(self) -> list[tuple]:
        """(speedup, MS-SSIM) points, one per timed row."""
        return [(r.speedup, r.ms_ssim) for r in self.rows if r.speedup is not None]

    def to_dict(self) -> dict:
        def clean(v):
            return None if isinstance(v, float) and (math.isnan(v) or math.isinf(v)) else v

        rows = []
        for r in self.rows:
            d = {k: clean(v) for k, v in asdict(r).items()}
            d["time_s"] = clean(r.time_s)
            rows.append(d)
        return {"shape": list(self.shape), "threads": self.threads, "repeats": self.repeats,
                "baseline": self.rows[self.baseline].label,
                "rows": rows, "plot": [[clean(a), clean(b)] for a, b in self.plot_data()]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def frontier_report(configs, test_set=None, shape=HD_SHAPE, repeats: int = 5, threads: int = 1,
                    baseline: int = 0, macs_only: bool = False, weights=None, seed: int = 0) -> Frontier:
    """Cost and timing for each config, plus quality when a test set is given.

    ``weights`` optionally maps a config index to a weight-file path; other
    configs run with seeded random weights. ``test_set`` is a sequence of
    PatchPair scored with PSNR / MS-SSIM.
    """
    configs = list(configs)
    if not configs:
        raise ValueError("frontier_report needs at least one config")
    weights = weights or {}
    rows = []
    for i, cfg in enumerate(configs):
        macs, params = count_macs(cfg, shape)
        row = BenchReport(cfg.label, cfg.variant, cfg.kernel_label, cfg.channel_label, cfg.blocks,
                          macs, params, peak_memory_bytes(cfg, shape))
        if not macs_only:
            model = build_generator(cfg, make_rng(seed))
            if i in weights:
                load_model(model, weights[i])
            row.wall_ms = time_inference(model, shape, repeats, threads)
            if test_set:
                rep = evaluate((enhance(model, p.phone), p.dslr) for p in test_set)
                row.psnr_db, row.ms_ssim = rep.psnr_db, rep.ms_ssim
        rows.append(row)
    if not macs_only:
        ref = rows[baseline].wall_ms
        for r in rows:
            r.speedup = ref / r.wall_ms
    return Frontier(rows, tuple(shape), threads, repeats, baseline, macs_only)


def parse_grid(text: str):
    """Benchmark grid: one config per line as ``key=value`` tokens, ``#`` comments.

    Keys: ``variant`` (baseline|strided), ``kernel``, ``strided_kernel``,
    ``channels`` (base width), ``blocks``, ``prelu``, ``batch_norm``,
    ``weights`` (optional trained weight file). Returns (configs, weights-map).
    """
    configs, weights = [], {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            kv = dict(tok.split("=", 1) for tok in line.split())
        except ValueError:
            raise ValueError(f"grid line {lineno}: expected key=value tokens") from None
        unknown = set(kv) - {"variant", "kernel", "strided_kernel", "channels", "blocks", "prelu",
                             "batch_norm", "weights"}
        if unknown:
            raise ValueError(f"grid line {lineno}: unknown keys {sorted(unknown)}")
        try:
            variant = kv.get("variant", "baseline")
            flags = {"use_prelu": kv.get("prelu", "no").lower() in ("yes", "true", "1"),
                     "batch_norm": kv.get("batch_norm", "yes").lower() in ("yes", "true", "1")}
            if variant == "baseline":
                cfg = GeneratorConfig.baseline(int(kv.get("kernel", 3)), int(kv.get("channels", 64)),
                                               int(kv.get("blocks", 4)), **flags)
            elif variant == "strided":
                cfg = GeneratorConfig.strided(int(kv.get("kernel", 3)), int(kv.get("strided_kernel", 4)),
                                              int(kv.get("channels", 16)), int(kv.get("blocks", 2)), **flags)
            else:
                raise ValueError(f"unknown variant {variant!r}")
            cfg.validate()
        except ValueError as exc:
            raise ValueError(f"grid line {lineno}: {exc}") from None
        if "weights" in kv:
            weights[len(configs)] = kv["weights"]
        configs.append(cfg)
    if not configs:
        raise ValueError("grid lists no configs")
    return configs, weights


# published architecture points: full-resolution residual grid and strided grid
RESIDUAL_GRID = [GeneratorConfig.baseline(k, c, b) for k, c, b in [
    (3, 64, 4), (3, 16, 1), (3, 16, 2), (3, 16, 3), (3, 16, 4), (3, 32, 2), (3, 32, 4), (3, 128, 1),
    (3, 128, 3), (5, 16, 1), (5, 16, 2), (5, 16, 3), (5, 16, 4), (5, 32, 2), (5, 32, 4), (5, 128, 1),
    (5, 128, 3)]]
STRIDED_GRID = [GeneratorConfig.strided(k, ks, c, use_prelu=p) for k, ks, c, p in [
    (3, 3, 16, False), (3, 3, 32, False), (3, 4, 16, False), (3, 4, 32, False), (4, 4, 16, False),
    (4, 4, 32, False), (4, 4, 32, True)]]
