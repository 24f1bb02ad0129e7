import json
import math

import numpy as np
import pytest

from fpie import bench, ops
from fpie.autodiff import no_grad
from fpie.models import GeneratorConfig, build_generator, count_parameters
from fpie.tensor import make_rng

ALL_GRIDS = bench.RESIDUAL_GRID + bench.STRIDED_GRID


def enumerated_macs(cfg, shape, monkeypatch):
    """Run a real forward pass and add up out_elems * cin * k^2 for every convolution call."""
    total = 0
    conv, tconv = ops.conv2d, ops.conv2d_transpose

    def counting_conv(x, spec, w, b=None):
        nonlocal total
        y = conv(x, spec, w, b)
        total += y.value.size * spec.in_channels * spec.kernel ** 2
        return y

    def counting_tconv(x, spec, w, b=None):
        nonlocal total
        y = tconv(x, spec, w, b)
        # each input pixel is scattered through every output channel of the kernel
        total += x.value.size * spec.out_channels * spec.kernel ** 2
        return y

    monkeypatch.setattr(ops, "conv2d", counting_conv)
    monkeypatch.setattr(ops, "conv2d_transpose", counting_tconv)
    model = build_generator(cfg, make_rng(0)).eval()
    with no_grad():
        model(np.zeros(shape, np.float32))
    monkeypatch.undo()
    return total, model


@pytest.mark.parametrize("cfg", ALL_GRIDS, ids=lambda c: c.label)
def test_count_macs_matches_enumeration(cfg, monkeypatch):
    shape = (2, 3, 16, 24)
    macs, params = bench.count_macs(cfg, shape)
    ref, model = enumerated_macs(cfg, shape, monkeypatch)
    assert macs == ref
    assert params == count_parameters(model)
    assert isinstance(macs, int) and isinstance(params, int)


def test_single_conv_example():
    layer = bench._conv("c", 1, 16, 16, 3, (100, 100))
    assert layer.macs == 16 * 16 * 9 * 100 * 100 == 23_040_000


def test_zero_blocks_hand_count():
    cfg = GeneratorConfig.baseline(3, 8, 0)
    h, w = 10, 12
    head = h * w * 8 * 3 * 9
    tail1 = h * w * 8 * 8 * 9
    tail2 = h * w * 3 * 8 * 9
    macs, params = bench.count_macs(cfg, (1, 3, h, w))
    assert macs == head + tail1 + tail2
    assert params == (8 * 3 * 9 + 8) + (8 * 8 * 9 + 8) + (3 * 8 * 9 + 3)


def test_hd_ratio_above_three():
    base, _ = bench.count_macs(GeneratorConfig.baseline(3, 64, 4))
    strided, _ = bench.count_macs(GeneratorConfig.strided(3, 4, 16))
    assert base / strided > 3.0


def test_invalid_shapes():
    with pytest.raises(ValueError):
        bench.count_macs(GeneratorConfig.strided(), (1, 3, 10, 10))
    with pytest.raises(ValueError):
        bench.count_macs(GeneratorConfig.baseline(), (1, 1, 8, 8))


def test_peak_memory_strided_below_baseline():
    base = bench.peak_memory_bytes(GeneratorConfig.baseline(3, 64, 4))
    strided = bench.peak_memory_bytes(GeneratorConfig.strided(3, 4, 16))
    assert strided < base
    # weights alone are a lower bound
    assert base > 4 * bench.count_macs(GeneratorConfig.baseline(3, 64, 4))[1]


def test_measure_protocol():
    model = build_generator(GeneratorConfig.strided(base_channels=4, blocks=1), make_rng(0))
    times = bench.measure(model, (1, 3, 16, 16), repeats=5)
    assert len(times) == 5
    with pytest.raises(ValueError):
        bench.measure(model, (1, 3, 16, 16), repeats=2)


def test_time_is_median(monkeypatch):
    monkeypatch.setattr(bench, "measure", lambda *a, **k: [5.0, 1.0, 9.0, 3.0, 7.0])
    assert bench.time_inference(None, repeats=5) == 5.0


def test_time_roughly_linear_in_pixels():
    model = build_generator(GeneratorConfig.strided(base_channels=8), make_rng(0))
    small = bench.time_inference(model, (1, 3, 128, 256), repeats=5)
    large = bench.time_inference(model, (1, 3, 256, 256), repeats=5)
    assert 1.0 <= large / small <= 3.0


SMALL = (1, 3, 16, 16)


def test_single_config_speedup_one():
    fr = bench.frontier_report([GeneratorConfig.strided(base_channels=4, blocks=1)], shape=SMALL, repeats=3)
    assert fr.rows[0].speedup == 1.0
    assert fr.plot_data() == [(1.0, None)]


def test_speedup_definition():
    cfgs = [GeneratorConfig.baseline(3, 8, 1), GeneratorConfig.strided(base_channels=4, blocks=1)]
    fr = bench.frontier_report(cfgs, shape=SMALL, repeats=3)
    base, second = fr.rows
    assert base.speedup == 1.0
    assert second.speedup == pytest.approx(base.wall_ms / second.wall_ms)
    fr1 = bench.frontier_report(cfgs, shape=SMALL, repeats=3, baseline=1)
    assert fr1.rows[1].speedup == 1.0


def test_table_columns_and_json():
    from fpie.data import synthetic_pairs
    cfgs = [GeneratorConfig.baseline(3, 8, 1)]
    test = synthetic_pairs(1, 176, seed=0)
    fr = bench.frontier_report(cfgs, test, shape=SMALL, repeats=3)
    header, row = fr.table().splitlines()
    assert header.split("\t")[:6] == ["Kernel size", "Channels", "Blocks", "Time (s)", "PSNR", "MS-SSIM"]
    cells = row.split("\t")
    assert cells[:3] == ["3", "8", "1"]
    assert math.isfinite(float(cells[4])) and 0 < float(cells[5]) <= 1
    doc = json.loads(fr.to_json())
    assert doc["shape"] == list(SMALL) and doc["baseline"] == cfgs[0].label
    assert set(doc["rows"][0]) >= {"macs", "params", "peak_mem_bytes", "wall_ms", "psnr_db", "ms_ssim", "speedup"}
    assert doc["plot"] == [[1.0, pytest.approx(fr.rows[0].ms_ssim)]]


def test_macs_only_report():
    fr = bench.frontier_report(bench.RESIDUAL_GRID[:2], macs_only=True)
    header = fr.table().splitlines()[0].split("\t")
    assert header == list(bench.MACS_COLUMNS)
    assert all(r.wall_ms is None and r.speedup is None for r in fr.rows)
    assert fr.plot_data() == []
    with pytest.raises(ValueError):
        bench.frontier_report([])


def test_parse_grid():
    text = """# two rows
variant=baseline kernel=3 channels=64 blocks=4
variant=strided kernel=3 strided_kernel=4 channels=16 prelu=yes weights=w.fpie
"""
    cfgs, weights = bench.parse_grid(text)
    assert cfgs[0] == GeneratorConfig.baseline(3, 64, 4)
    assert cfgs[1] == GeneratorConfig.strided(3, 4, 16, use_prelu=True)
    assert weights == {1: "w.fpie"}


@pytest.mark.parametrize("text, msg", [
    ("", "no configs"),
    ("variant=wavy", "line 1"),
    ("kernel", "key=value"),
    ("colour=red", "unknown keys"),
    ("\nvariant=baseline blocks=x", "line 2"),
])
def test_parse_grid_errors(text, msg):
    with pytest.raises(ValueError, match=msg):
        bench.parse_grid(text)
