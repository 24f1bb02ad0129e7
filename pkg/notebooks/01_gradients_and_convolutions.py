# %% [markdown]
# # Gradients and convolutions
#
# The engine is a define-by-run tape over numpy arrays. Every op records a
# closure that maps the output gradient to input gradients; `backward` walks
# the tape in reverse. This notebook checks a few ops by hand and then runs
# the finite-difference suite.

# %%
import numpy as np

from fpie import gradcheck, ops
from fpie.autodiff import Node, backward
from fpie.tensor import make_rng

rng = make_rng(0)

# %% [markdown]
# ## A hand-sized example
#
# `sum(relu(x) * 3)` has gradient 3 where x is positive and 0 elsewhere.

# %%
x = Node(np.array([[[[-1.0, 0.5], [2.0, -0.1]]]], np.float32), requires_grad=True)
loss = ops.sum_all(ops.scale(ops.relu(x), 3.0))
backward(loss)
print(loss.item(), x.grad.ravel())

# %% [markdown]
# ## Strided and transposed convolution
#
# A stride-2 convolution halves the resolution; the transposed convolution
# with the same weights is its exact adjoint, so `<A x, y> == <x, A^T y>`.

# %%
spec = ops.Conv2dSpec(3, 8, 4, 2, 1, has_bias=False)
tspec = ops.ConvTranspose2dSpec(8, 3, 4, 2, 1, has_bias=False)
w = Node(rng.standard_normal((8, 3, 4, 4)).astype(np.float32))
xa = rng.standard_normal((1, 3, 16, 16)).astype(np.float32)
y = rng.standard_normal((1, 8, 8, 8)).astype(np.float32)
ax = ops.conv2d(xa, spec, w).value
aty = ops.conv2d_transpose(y, tspec, w).value
print(ax.shape, aty.shape)
print(float((ax.astype(np.float64) * y).sum()), float((xa.astype(np.float64) * aty).sum()))

# %% [markdown]
# ## Why the upsampling kernel is 4 wide
#
# With unit weights and a constant input, a transposed convolution prints the
# kernel overlap count at every pixel. Kernel 4 with stride 2 covers every
# output pixel twice along each axis. Kernel 3 alternates between one and two,
# which is the checkerboard pattern.

# %%
ones = np.ones((1, 1, 6, 6), np.float32)
for k in (4, 3):
    out = ops.conv2d_transpose(ones, ops.ConvTranspose2dSpec(1, 1, k, 2, 0),
                               Node(np.ones((1, 1, k, k), np.float32))).value[0, 0]
    print(f"k={k}\n", out[k:-k, k:-k].astype(int))

# %% [markdown]
# ## Finite-difference suite
#
# Each check perturbs every input by +-1e-3 in float32 and compares the
# central difference with the tape gradient. The same suite runs from the
# command line as `fpie gradcheck`.

# %%
results = gradcheck.run_suite(seeds=(0,))
for r in results:
    print(r.line())
print("worst:", max(r.rel_error for r in results))
