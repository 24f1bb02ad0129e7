"""Define-by-run reverse-mode differentiation.

Every differentiable op returns a :class:`Node` that remembers its parents and
a closure mapping the output gradient to one gradient per parent. Leaves
(parameters and inputs created with ``requires_grad=True``) accumulate
gradients across :func:`backward` calls; callers reset them with
:func:`zero_grads`.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .tensor import DTYPE

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Run ops without recording a tape (inference, target features)."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Node:
    __slots__ = ("value", "_grad", "parents", "backward_fn", "requires_grad", "op", "__weakref__")

    def __init__(self, value, parents: Sequence["Node"] = (), backward_fn: Callable | None = None,
                 requires_grad: bool = False, op: str = "leaf"):
        self.value = value
        self._grad = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.op = op

    @property
    def shape(self):
        return self.value.shape

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.value)
        return self._grad

    @grad.setter
    def grad(self, g):
        self._grad = g

    def detach(self) -> "Node":
        return Node(self.value)

    def item(self) -> float:
        return float(self.value.reshape(-1)[0])

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Node(op={self.op}, shape={self.value.shape})"

    # arithmetic sugar; implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)


class Parameter(Node):
    """A named leaf owned by a model. Non-trainable parameters are buffers."""

    __slots__ = ("name", "trainable")

    def __init__(self, value, name: str, trainable: bool = True):
        super().__init__(np.ascontiguousarray(value, dtype=DTYPE), requires_grad=trainable)
        self.name = name
        self.trainable = trainable

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape}, trainable={self.trainable})"


def constant(value) -> Node:
    return value if isinstance(value, Node) else Node(np.asarray(value, dtype=DTYPE))


def make_node(value, parents: Iterable[Node], backward_fn: Callable, op: str) -> Node:
    """Wrap an op result, recording it on the tape only when some parent needs grad."""
    parents = tuple(parents)
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Node(value, parents, backward_fn, requires_grad=True, op=op)
    return Node(value, op=op)


def _topological_order(root: Node) -> list[Node]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Node) -> None:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if root.value.size != 1 or root.value.ndim != 4:
        raise ValueError(f"backward needs a scalar (1,1,1,1) root, got shape {root.value.shape}")
    if not root.requires_grad:
        return
    # intermediate grads live only for this pass so repeated calls add exactly once per leaf
    pending = {id(root): np.ones_like(root.value)}
    for node in reversed(_topological_order(root)):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.grad = node.grad + g if node._grad is not None else g.astype(node.value.dtype, copy=True)
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg


def zero_grads(params: Iterable[Node]) -> None:
    for p in params:
        p.grad = np.zeros_like(p.value)
