import numpy as np
import pytest

from fpie import gradcheck, ops
from fpie.autodiff import Parameter, make_node

DIFFERENTIABLE_OPS = ["add", "sub", "mul", "scale", "channel_affine", "square", "log", "clamp", "sigmoid",
                      "relu", "leaky_relu", "prelu", "sum_all", "mean_all", "sum_per_image",
                      "l2_norm_per_image", "global_avg_pool", "max_pool2d", "diff_h", "diff_v", "pad_zero",
                      "crop_window", "conv2d", "conv2d_transpose", "batch_norm", "grayscale", "gaussian_blur"]
LOSSES = ["color_loss", "content_loss", "texture_loss_generator", "texture_loss_discriminator", "tv_loss",
          "total_loss"]


def test_registry_covers_every_op_and_loss():
    names = set(gradcheck.CHECKS)
    for op in DIFFERENTIABLE_OPS + LOSSES:
        assert any(n == op or n.startswith(op + "_") for n in names), op


@pytest.mark.parametrize("name", ["conv2d_k4_s2", "batch_norm_train", "color_loss", "tv_loss"])
def test_sample_checks_pass(name):
    res = gradcheck.run_check(name, seed=0)
    assert res.ok, res.line()


def test_inputs_respect_size_limit():
    for name, build in gradcheck.CHECKS.items():
        _, leaves = build(np.random.default_rng(0))
        for leaf in leaves:
            if not isinstance(leaf, Parameter):  # model weights are not inputs
                assert leaf.value.size <= 4 * 8 * 8, name


def test_corrupted_backward_is_caught(monkeypatch):
    def bad_relu(x):
        v = x.value
        mask = v > 0
        # wrong: passes gradient through negative inputs at half strength
        return make_node(np.where(mask, v, 0).astype(v.dtype), (x,), lambda g: (g * np.where(mask, 1, 0.5),), "relu")

    monkeypatch.setattr(ops, "relu", bad_relu)
    res = gradcheck.run_check("relu", seed=0)
    assert not res.ok and "FAIL" in res.line() and "relu" in res.line()


def test_result_line_format():
    r = gradcheck.CheckResult("conv2d", 1, 2.5e-4)
    assert r.ok and r.line().startswith("ok") and "max_rel_err=2.500e-04" in r.line()
