"""Tensor-level reverse-mode differentiation on numpy arrays.

A :class:`Node` wraps an ndarray value. Operations build a DAG of nodes whose
``requires_grad`` flag is set whenever any parent requires it; calling
:func:`backward` on a scalar root walks that DAG in reverse topological order
and accumulates gradients into every reachable node. Gradients on leaves add
up across calls, so callers zero them between optimizer steps.
"""

import numpy as np


class Node:
    __slots__ = ("value", "grad", "op", "parents", "requires_grad", "_backward")

    __array_priority__ = 100  # make ndarray <op> Node defer to Node

    def __init__(self, value, requires_grad=False, op="leaf", parents=(), backward_fn=None):
        self.value = np.asarray(value)
        self.grad = None
        self.op = op
        self.parents = tuple(parents)
        self.requires_grad = requires_grad
        self._backward = backward_fn

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def ndim(self):
        return self.value.ndim

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Node(op={self.op}, shape={self.value.shape}, dtype={self.value.dtype})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def param(value):
    return Node(np.array(value), requires_grad=True, op="param")


def const(value):
    return value if isinstance(value, Node) else Node(value)


def _make(value, parents, op, backward_fn):
    if any(p.requires_grad for p in parents):
        return Node(value, True, op, parents, backward_fn)
    return Node(value, False, op)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _accum(node, g):
    if not node.requires_grad:
        return
    g = _unbroadcast(np.asarray(g), node.value.shape)
    if g.dtype != node.value.dtype:
        g = g.astype(node.value.dtype)
    node.grad = g if node.grad is None else node.grad + g


def _topo_order(root):
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


def backward(root):
    """Accumulate d(root)/d(node) into ``.grad`` of every node reachable from ``root``."""
    if root.value.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.value.shape}")
    if not root.requires_grad:
        return
    order = _topo_order(root)
    # interior nodes start clean; leaves keep what the caller left there
    for node in order:
        if node.parents:
            node.grad = None
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    for node in order:
        if node.parents:
            node.grad = None


# ---------------------------------------------------------------- elementwise


def add(a, b):
    a, b = const(a), const(b)

    def bw(g):
        _accum(a, g)
        _accum(b, g)

    return _make(a.value + b.value, (a, b), "add", bw)


def sub(a, b):
    a, b = const(a), const(b)

    def bw(g):
        _accum(a, g)
        _accum(b, -g)

    return _make(a.value - b.value, (a, b), "sub", bw)


def mul(a, b):
    a, b = const(a), const(b)

    def bw(g):
        _accum(a, g * b.value)
        _accum(b, g * a.value)

    return _make(a.value * b.value, (a, b), "mul", bw)


def div(a, b):
    a, b = const(a), const(b)
    out = a.value / b.value

    def bw(g):
        _accum(a, g / b.value)
        _accum(b, -g * out / b.value)

    return _make(out, (a, b), "div", bw)


def neg(a):
    a = const(a)
    return _make(-a.value, (a,), "neg", lambda g: _accum(a, -g))


def log(a):
    a = const(a)
    return _make(np.log(a.value), (a,), "log", lambda g: _accum(a, g / a.value))


def exp(a):
    a = const(a)
    out = np.exp(a.value)
    return _make(out, (a,), "exp", lambda g: _accum(a, g * out))


def relu(a):
    a = const(a)
    mask = a.value > 0
    return _make(a.value * mask, (a,), "relu", lambda g: _accum(a, g * mask))


def clamp_min(a, lo):
    """max(a, lo); entries that were raised to ``lo`` pass no gradient.

    NaN is kept, so a diverged graph is not masked by the clamp.
    """
    a = const(a)
    keep = ~(a.value < lo)
    out = np.where(keep, a.value, np.asarray(lo, dtype=a.value.dtype))
    return _make(out, (a,), "clamp_min", lambda g: _accum(a, g * keep))


def astype(a, dtype):
    a = const(a)
    if a.value.dtype == dtype:
        return a
    return _make(a.value.astype(dtype), (a,), "astype", lambda g: _accum(a, g))


# ------------------------------------------------------------------ reductions


def sum_(a, axis=None, keepdims=False):
    a = const(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.value.shape))

    return _make(out, (a,), "sum", bw)


def mean(a, axis=None, keepdims=False):
    a = const(a)
    total = sum_(a, axis, keepdims)
    count = a.value.size // total.value.size
    return total / np.asarray(count, dtype=a.value.dtype)


# ----------------------------------------------------------------------- shape


def reshape(a, shape):
    a = const(a)
    old = a.value.shape
    return _make(a.value.reshape(shape), (a,), "reshape", lambda g: _accum(a, g.reshape(old)))


def transpose(a, axes=None):
    a = const(a)
    if axes is None:
        axes = tuple(reversed(range(a.value.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(a.value.transpose(axes), (a,), "transpose", lambda g: _accum(a, g.transpose(inv)))


def swapaxes(a, i, j):
    axes = list(range(const(a).value.ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, tuple(axes))


def getitem(a, idx):
    a = const(a)

    basic = isinstance(idx, (slice, int)) or (
        isinstance(idx, tuple) and all(isinstance(i, (slice, int)) for i in idx)
    )

    def bw(g):
        full = np.zeros_like(a.value)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        _accum(a, full)

    return _make(a.value[idx], (a,), "getitem", bw)


def concat(nodes, axis=0):
    nodes = [const(n) for n in nodes]
    sizes = np.cumsum([n.value.shape[axis] for n in nodes])[:-1]

    def bw(g):
        for n, piece in zip(nodes, np.split(g, sizes, axis=axis)):
            _accum(n, piece)

    return _make(np.concatenate([n.value for n in nodes], axis=axis), nodes, "concat", bw)


# ---------------------------------------------------------------- linear algebra


def matmul(a, b):
    a, b = const(a), const(b)

    def bw(g):
        _accum(a, g @ b.value.T)
        _accum(b, a.value.T @ g)

    return _make(a.value @ b.value, (a, b), "matmul", bw)


def softmax(a, axis=-1):
    a = const(a)
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        _accum(a, out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return _make(out, (a,), "softmax", bw)
