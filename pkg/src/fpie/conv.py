"""Convolution kernels on raw arrays.

The fast path is im2col + one GEMM per chunk of output rows; chunking keeps the
column buffer bounded so HD frames fit in memory. Three primitives cover both
conv2d and its transpose:

* ``correlate(xp, w, s)``          y[n,f,i,j] = sum_{c,a,b} w[f,c,a,b] xp[n,c,i*s+a,j*s+b]
* ``correlate_adjoint(g, w, s, shape)``  adjoint of ``correlate`` w.r.t. ``xp``
* ``correlate_weight_grad(xp, g, s, k)`` adjoint of ``correlate`` w.r.t. ``w``

Inputs are assumed already padded. ``conv2d_loops`` and
``conv_transpose2d_loops`` are slow explicit-loop references used as oracles.
"""
from __future__ import annotations

import numpy as np

# max float32 elements in one column buffer (~128 MB)
COLUMN_BUDGET = 32 * 1024 * 1024


def out_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def transpose_out_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size - 1) * stride - 2 * pad + kernel


def _row_chunks(n_rows: int, row_cost: int):
    step = max(1, COLUMN_BUDGET // max(row_cost, 1))
    for r0 in range(0, n_rows, step):
        yield r0, min(n_rows, r0 + step)


def _columns(xp, k, s, r0, r1, Wo):
    """(N, C*k*k, rows*Wo) column tensor for output rows [r0, r1)."""
    N, C = xp.shape[:2]
    rows = r1 - r0
    cols = np.empty((N, C, k, k, rows, Wo), dtype=xp.dtype)
    for a in range(k):
        top = r0 * s + a
        for b in range(k):
            cols[:, :, a, b] = xp[:, :, top:top + (rows - 1) * s + 1:s, b:b + (Wo - 1) * s + 1:s]
    return cols.reshape(N, C * k * k, rows * Wo)


def correlate(xp: np.ndarray, w: np.ndarray, s: int) -> np.ndarray:
    N, C, Hp, Wp = xp.shape
    F, _, k, _ = w.shape
    Ho, Wo = (Hp - k) // s + 1, (Wp - k) // s + 1
    wm = w.reshape(F, C * k * k)
    out = np.empty((N, F, Ho, Wo), dtype=np.result_type(xp, w))
    for r0, r1 in _row_chunks(Ho, C * k * k * N * Wo):
        out[:, :, r0:r1] = np.matmul(wm, _columns(xp, k, s, r0, r1, Wo)).reshape(N, F, r1 - r0, Wo)
    return out


def correlate_adjoint(g: np.ndarray, w: np.ndarray, s: int, xp_shape) -> np.ndarray:
    N, F, Ho, Wo = g.shape
    _, C, k, _ = w.shape
    dxp = np.zeros(xp_shape, dtype=np.result_type(g, w))
    wt = np.ascontiguousarray(w.reshape(F, C * k * k).T)
    for r0, r1 in _row_chunks(Ho, C * k * k * N * Wo):
        rows = r1 - r0
        gm = g[:, :, r0:r1].reshape(N, F, rows * Wo)
        cols = np.matmul(wt, gm).reshape(N, C, k, k, rows, Wo)
        for a in range(k):
            top = r0 * s + a
            for b in range(k):
                dxp[:, :, top:top + (rows - 1) * s + 1:s, b:b + (Wo - 1) * s + 1:s] += cols[:, :, a, b]
    return dxp


def correlate_weight_grad(xp: np.ndarray, g: np.ndarray, s: int, k: int) -> np.ndarray:
    N, F, Ho, Wo = g.shape
    C = xp.shape[1]
    dw = np.zeros((F, C * k * k), dtype=np.result_type(xp, g))
    for r0, r1 in _row_chunks(Ho, C * k * k * N * Wo):
        gm = g[:, :, r0:r1].reshape(N, F, (r1 - r0) * Wo)
        cols = _columns(xp, k, s, r0, r1, Wo)
        for n in range(N):
            dw += gm[n] @ cols[n].T
    return dw.reshape(F, C, k, k)


def zero_pad(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def crop(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return x[:, :, pad:-pad, pad:-pad]


def conv2d_forward(x, w, stride, pad):
    return correlate(zero_pad(x, pad), w, stride)


def conv_transpose2d_forward(x, w, stride, pad):
    """``w`` has shape (in_channels, out_channels, k, k)."""
    N, _, H, W = x.shape
    _, Cout, k, _ = w.shape
    canvas = ((N, Cout, (H - 1) * stride + k, (W - 1) * stride + k))
    return crop(correlate_adjoint(x, w, stride, canvas), pad)


def conv2d_loops(x, w, b, stride, pad):
    """Reference cross-correlation written as explicit loops."""
    N, C, H, W = x.shape
    F, _, k, _ = w.shape
    xp = zero_pad(x.astype(np.float64), pad)
    Ho, Wo = out_size(H, k, stride, pad), out_size(W, k, stride, pad)
    out = np.zeros((N, F, Ho, Wo))
    for n in range(N):
        for f in range(F):
            for i in range(Ho):
                for j in range(Wo):
                    acc = 0.0
                    for c in range(C):
                        for a in range(k):
                            for bb in range(k):
                                acc += w[f, c, a, bb] * xp[n, c, i * stride + a, j * stride + bb]
                    out[n, f, i, j] = acc + (b[f] if b is not None else 0.0)
    return out


def conv_transpose2d_loops(x, w, b, stride, pad):
    """Reference transposed convolution: scatter every input pixel through the kernel."""
    N, Cin, H, W = x.shape
    _, Cout, k, _ = w.shape
    full = np.zeros((N, Cout, (H - 1) * stride + k, (W - 1) * stride + k))
    for n in range(N):
        for ci in range(Cin):
            for i in range(H):
                for j in range(W):
                    for co in range(Cout):
                        for a in range(k):
                            for bb in range(k):
                                full[n, co, i * stride + a, j * stride + bb] += x[n, ci, i, j] * w[ci, co, a, bb]
    out = crop(full, pad)
    if b is not None:
        out = out + np.asarray(b).reshape(1, -1, 1, 1)
    return out
