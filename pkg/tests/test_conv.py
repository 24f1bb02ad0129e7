import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fpie import conv as K
from fpie import ops
from fpie.autodiff import Node, Parameter


def rand(rng, *shape):
    return rng.standard_normal(shape).astype(np.float32)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 2), cin=st.integers(1, 3), cout=st.integers(1, 3), size=st.integers(4, 9),
       k=st.integers(1, 4), stride=st.sampled_from([1, 2]), pad=st.integers(0, 2), seed=st.integers(0, 2**16))
def test_fast_conv_matches_loops(n, cin, cout, size, k, stride, pad, seed):
    if size + 2 * pad < k:
        return
    rng = np.random.default_rng(seed)
    x, w, b = rand(rng, n, cin, size, size), rand(rng, cout, cin, k, k), rand(rng, cout)
    fast = K.conv2d_forward(x, w, stride, pad) + b.reshape(1, -1, 1, 1)
    ref = K.conv2d_loops(x, w, b, stride, pad)
    np.testing.assert_allclose(fast, ref, rtol=1e-5, atol=1e-5 * np.abs(ref).max())


@settings(max_examples=25, deadline=None)
@given(cin=st.integers(1, 3), cout=st.integers(1, 3), size=st.integers(1, 6),
       k=st.integers(2, 4), pad=st.integers(0, 1), seed=st.integers(0, 2**16))
def test_fast_transpose_matches_loops(cin, cout, size, k, pad, seed):
    rng = np.random.default_rng(seed)
    x, w = rand(rng, 1, cin, size, size), rand(rng, cin, cout, k, k)
    if K.transpose_out_size(size, k, 2, pad) < 1:
        return
    fast = K.conv_transpose2d_forward(x, w, 2, pad)
    ref = K.conv_transpose2d_loops(x, w, None, 2, pad)
    np.testing.assert_allclose(fast, ref, rtol=1e-5, atol=1e-5 * max(np.abs(ref).max(), 1))


def test_identity_kernel_reproduces_input_exactly():
    x = np.random.default_rng(0).random((1, 1, 9, 7), dtype=np.float32)
    w = np.zeros((1, 1, 3, 3), np.float32)
    w[0, 0, 1, 1] = 1
    y = ops.conv2d(x, ops.Conv2dSpec(1, 1, 3, 1, 1, False), Node(w)).value
    assert np.array_equal(y, x)


def test_strided_shape():
    spec = ops.Conv2dSpec(3, 8, 4, 2, 1)
    assert spec.output_hw(100, 100) == (50, 50)
    tspec = ops.ConvTranspose2dSpec(8, 3, 4, 2, 1)
    assert tspec.output_hw(25, 25) == (50, 50)


@pytest.mark.parametrize("k", [1, 3, 5, 7])
def test_odd_kernel_same_padding_preserves_shape(k):
    x = np.zeros((1, 2, 11, 6), np.float32)
    y = ops.conv2d(x, ops.Conv2dSpec(2, 2, k, 1, (k - 1) // 2), Node(np.zeros((2, 2, k, k), np.float32)))
    assert y.shape == x.shape


@pytest.mark.parametrize("h,w", [(8, 8), (100, 100), (12, 20)])
def test_down_then_up_restores_shape(h, w):
    x = np.zeros((1, 1, h, w), np.float32)
    d = ops.conv2d(x, ops.Conv2dSpec(1, 1, 4, 2, 1), Node(np.zeros((1, 1, 4, 4), np.float32)))
    u = ops.conv2d_transpose(d, ops.ConvTranspose2dSpec(1, 1, 4, 2, 1), Node(np.zeros((1, 1, 4, 4), np.float32)))
    assert d.shape[2:] == (h // 2, w // 2) and u.shape == x.shape


def test_errors():
    with pytest.raises(ValueError, match="input channels"):
        ops.conv2d(np.zeros((1, 2, 5, 5), np.float32), ops.Conv2dSpec(3, 1, 3), Node(np.zeros((1, 3, 3, 3))))
    with pytest.raises(ValueError, match="too small"):
        ops.conv2d(np.zeros((1, 1, 2, 2), np.float32), ops.Conv2dSpec(1, 1, 5), Node(np.zeros((1, 1, 5, 5))))
    with pytest.raises(ValueError, match="input channels"):
        ops.conv2d_transpose(np.zeros((1, 2, 5, 5), np.float32), ops.ConvTranspose2dSpec(3, 1, 4, 2, 1),
                             Node(np.zeros((3, 1, 4, 4))))
    with pytest.raises(ValueError):
        ops.Conv2dSpec(1, 1, 3, stride=3)


@pytest.mark.parametrize("k,pad", [(4, 1), (3, 1), (3, 0), (2, 0)])
def test_adjoint_identity(k, pad):
    rng = np.random.default_rng(k * 10 + pad)
    H = 12
    x = rand(rng, 2, 3, H, H)
    w = rand(rng, 5, 3, k, k)
    y_shape = ops.Conv2dSpec(3, 5, k, 2, pad).output_hw(H, H)
    y = rand(rng, 2, 5, *y_shape)
    ax = ops.conv2d(x, ops.Conv2dSpec(3, 5, k, 2, pad, False), Node(w)).value
    # the transposed conv shares w: (out=5 -> in=3), i.e. layout (in_t=5, out_t=3, k, k)
    aty = K.crop(K.correlate_adjoint(y, w, 2, (2, 3, H + 2 * pad, H + 2 * pad)), pad)
    lhs = float((ax.astype(np.float64) * y).sum())
    rhs = float((x.astype(np.float64) * aty).sum())
    assert abs(lhs - rhs) <= 1e-4 * max(abs(lhs), abs(rhs))


def test_transpose_op_is_adjoint_of_conv():
    rng = np.random.default_rng(5)
    x = rand(rng, 1, 3, 10, 10)
    w = rand(rng, 4, 3, 4, 4)
    y = rand(rng, 1, 4, 5, 5)
    ax = ops.conv2d(x, ops.Conv2dSpec(3, 4, 4, 2, 1, False), Node(w)).value
    aty = ops.conv2d_transpose(y, ops.ConvTranspose2dSpec(4, 3, 4, 2, 1, False), Node(w)).value
    lhs, rhs = float((ax.astype(np.float64) * y).sum()), float((x.astype(np.float64) * aty).sum())
    assert abs(lhs - rhs) <= 1e-4 * abs(lhs)


def overlap_counts(k, s, n):
    """How many kernel taps land on each output pixel of a stride-s transposed conv (1-D)."""
    out = np.zeros((n - 1) * s + k, int)
    for i in range(n):
        out[i * s:i * s + k] += 1
    return out


@pytest.mark.parametrize("k,constant_interior", [(4, True), (3, False)])
def test_checkerboard(k, constant_interior):
    x = np.ones((1, 1, 8, 8), np.float32)
    w = Node(np.ones((1, 1, k, k), np.float32))
    y = ops.conv2d_transpose(x, ops.ConvTranspose2dSpec(1, 1, k, 2, 0), w).value[0, 0]
    interior = y[k:-k, k:-k]
    # oracle: with unit weights the output is the product of 1-D overlap counts
    counts = overlap_counts(k, 2, 8)
    np.testing.assert_array_equal(y, np.outer(counts, counts))
    assert (np.ptp(interior) == 0) == constant_interior


def test_conv_backward_shapes_and_bias():
    rng = np.random.default_rng(3)
    x = Parameter(rand(rng, 2, 3, 7, 7), "x")
    w = Parameter(rand(rng, 4, 3, 3, 3), "w")
    b = Parameter(rand(rng, 4), "b")
    y = ops.conv2d(x, ops.Conv2dSpec(3, 4, 3, 2, 1), w, b)
    from fpie.autodiff import backward
    backward(ops.sum_all(y))
    assert x.grad.shape == x.shape and w.grad.shape == w.shape
    np.testing.assert_allclose(b.grad, np.full(4, 2 * 4 * 4), rtol=0)
