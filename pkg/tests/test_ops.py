import math

import numpy as np
import pytest

from fpie import ops
from fpie.autodiff import Node, Parameter, backward
from fpie.layers import Conv2d, ConvTranspose2d
from fpie.tensor import make_rng


def row(*vals):
    return np.array(vals, np.float32).reshape(1, 1, 1, -1)


def test_relu():
    assert ops.relu(Node(row(-1, 2))).value.ravel().tolist() == [0, 2]


def test_prelu_by_hand():
    y = ops.prelu(Node(row(-2, 3)), Node(np.array([0.25], np.float32)))
    assert y.value.ravel().tolist() == [-0.5, 3]


def test_prelu_zero_slope_is_relu():
    x = np.random.default_rng(0).normal(size=(2, 3, 4, 4)).astype(np.float32)
    y = ops.prelu(Node(x), Node(np.zeros(3, np.float32))).value
    assert np.array_equal(y, ops.relu(Node(x)).value)


def test_prelu_slope_count():
    with pytest.raises(ValueError, match="slopes"):
        ops.prelu(Node(np.zeros((1, 3, 2, 2), np.float32)), Node(np.zeros(2, np.float32)))


def _bn_params(C, gamma, beta):
    return (Node(np.full(C, gamma, np.float32)), Node(np.full(C, beta, np.float32)),
            Node(np.zeros(C, np.float32)), Node(np.ones(C, np.float32)))


def test_batch_norm_train_statistics():
    x = np.random.default_rng(1).normal(3, 2, size=(4, 2, 8, 8)).astype(np.float32)
    g, b, rm, rv = _bn_params(2, -1.5, 0.7)
    y = ops.batch_norm(Node(x), g, b, True, rm, rv).value.astype(np.float64)
    np.testing.assert_allclose(y.mean(axis=(0, 2, 3)), 0.7, atol=1e-3)
    np.testing.assert_allclose(y.std(axis=(0, 2, 3)), 1.5, atol=1e-3)


def test_batch_norm_identity_on_normalized_input():
    x = np.random.default_rng(2).normal(size=(2, 3, 16, 16))
    x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
    x = x.astype(np.float32)
    g, b, rm, rv = _bn_params(3, 1.0, 0.0)
    y = ops.batch_norm(Node(x), g, b, True, rm, rv).value
    np.testing.assert_allclose(y, x, atol=1e-4)


def test_batch_norm_running_stats_and_eval():
    x = np.random.default_rng(3).normal(2, 1, size=(2, 1, 4, 4)).astype(np.float32)
    g, b, rm, rv = _bn_params(1, 1.0, 0.0)
    ops.batch_norm(Node(x), g, b, True, rm, rv)
    m = x.mean(dtype=np.float64)
    assert rm.value[0] == pytest.approx(0.01 * m, rel=1e-5)
    y = ops.batch_norm(Node(x), g, b, False, rm, rv).value
    expected = (x - rm.value[0]) / math.sqrt(rv.value[0] + 1e-5)
    np.testing.assert_allclose(y, expected, rtol=1e-5)


def test_batch_norm_length_mismatch():
    with pytest.raises(ValueError):
        g, b, rm, rv = _bn_params(2, 1, 0)
        ops.batch_norm(Node(np.zeros((1, 3, 2, 2), np.float32)), g, b, True, rm, rv)


@pytest.mark.parametrize("rgb,expected", [((1, 1, 1), 1.0), ((0, 1, 0), 0.587), ((0.3, 0.3, 0.3), 0.3)])
def test_grayscale(rgb, expected):
    x = np.array(rgb, np.float32).reshape(1, 3, 1, 1)
    assert ops.grayscale(x).value.item() == pytest.approx(expected, abs=1e-6)


def test_grayscale_coefficients_and_channel_check():
    assert abs(float(np.float32(sum(ops.LUMA))) - 1.0) <= np.finfo(np.float32).eps
    with pytest.raises(ValueError):
        ops.grayscale(np.zeros((1, 1, 2, 2), np.float32))


def literal_kernel(A, mu, sigma, r):
    """The colour-loss kernel evaluated term by term (denominator 2 sigma as written)."""
    return [[A * math.exp(-((k - mu) ** 2) / (2 * sigma) - ((l - mu) ** 2) / (2 * sigma))
             for l in range(-r, r + 1)] for k in range(-r, r + 1)]


def test_gaussian_kernel_matches_literal_definition():
    k = ops.build_gaussian_kernel()
    np.testing.assert_allclose(k.weights, literal_kernel(0.053, 0, 3, 10), rtol=1e-12)
    assert k.weights[10, 10] == pytest.approx(0.053)
    assert np.array_equal(k.weights, k.weights[::-1, ::-1])


def test_gaussian_kernel_sums_to_about_one():
    total = sum(map(sum, literal_kernel(0.053, 0, 3, 10)))
    assert abs(total - 1) < 0.02
    assert ops.build_gaussian_kernel().weights.sum() == pytest.approx(total)


def test_gaussian_kernel_sigma_squared_mode():
    k = ops.build_gaussian_kernel(sigma_squared=True)
    r = np.arange(-10, 11)
    np.testing.assert_allclose(k.factor, np.exp(-r ** 2 / 18.0))


@pytest.mark.parametrize("kw", [{"sigma": 0}, {"sigma": -1}, {"radius": 0}])
def test_gaussian_kernel_errors(kw):
    with pytest.raises(ValueError):
        ops.build_gaussian_kernel(**kw)


def test_blur_of_constant_image():
    k = ops.build_gaussian_kernel()
    y = ops.gaussian_blur(np.full((1, 3, 30, 25), 0.4, np.float32), k).value
    np.testing.assert_allclose(y, 0.4 * k.weights.sum(), rtol=1e-5)


def test_blur_matches_explicit_reflect_correlation():
    rng = np.random.default_rng(4)
    x = rng.random((1, 2, 9, 13)).astype(np.float32)
    k = ops.build_gaussian_kernel(radius=4)
    padded = np.pad(x.astype(np.float64), ((0, 0), (0, 0), (4, 4), (4, 4)), mode="reflect")
    ref = np.zeros(x.shape)
    for a in range(9):
        for b in range(9):
            ref += k.weights[a, b] * padded[:, :, a:a + 9, b:b + 13]
    np.testing.assert_allclose(ops.gaussian_blur(x, k).value, ref, rtol=1e-5, atol=1e-7)


def test_max_pool_and_avg_pool():
    x = np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4)
    assert ops.max_pool2d(Node(x)).value.ravel().tolist() == [5, 7, 13, 15]
    assert ops.global_avg_pool(Node(x)).value.item() == 7.5


def test_clamp_passes_gradient_inside_only():
    x = Parameter(row(-1, 0.5, 2), "x")
    backward(ops.sum_all(ops.clamp(x, 0, 1)))
    assert x.grad.ravel().tolist() == [0, 1, 0]


def test_sigmoid_is_stable():
    y = ops.sigmoid(Node(row(-1000, 0, 1000))).value.ravel()
    assert y.tolist() == [0.0, 0.5, 1.0] and np.all(np.isfinite(y))


@pytest.mark.parametrize("k", [2, 3, 4, 5])
def test_same_conv_layer_keeps_shape(k):
    conv = Conv2d(3, 4, k, make_rng(0))
    assert conv(np.zeros((1, 3, 10, 13), np.float32)).shape == (1, 4, 10, 13)


@pytest.mark.parametrize("k", [2, 3, 4, 5])
def test_upsampling_layer_doubles(k):
    up = ConvTranspose2d(4, 2, k, make_rng(0))
    assert up(np.zeros((1, 4, 5, 7), np.float32)).shape == (1, 2, 10, 14)
