"""Minimal reverse-mode autodiff on dense numpy arrays.

A :class:`Tensor` wraps an ndarray and remembers the op that produced it as a
closure. ``backward()`` runs the tape once in reverse topological order and
then releases it; a second ``backward()`` on the same graph raises
``StaleGraphError``. Structured ops (convolutions, LSTM, instance norm) build
their nodes with :func:`make_node` and live in :mod:`fbse.layers`.
"""

import contextlib

import numpy as np
from scipy.special import expit

from .errors import ShapeMismatchError, StaleGraphError

_grad_enabled = [True]


@contextlib.contextmanager
def no_grad():
    """Disable tape construction inside the block (inference paths)."""
    _grad_enabled.append(False)
    try:
        yield
    finally:
        _grad_enabled.pop()


class Tensor:
    """ndarray plus optional gradient and backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "_spent")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward_fn = None
        self._spent = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, grad=None):
        """Reverse-mode sweep from this node; releases the tape afterwards."""
        if self._spent:
            raise StaleGraphError("graph already consumed by a previous backward()")
        if self._backward_fn is None and not self.requires_grad:
            raise StaleGraphError("backward() on a tensor with no recorded graph")
        if grad is None:
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
            if grad.shape != self.data.shape:
                raise ShapeMismatchError(f"seed grad {grad.shape} vs value {self.data.shape}")
        order = _toposort(self)
        self.accumulate_grad(grad)
        for node in reversed(order):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)
            if node is not self:
                node._release()
        self._release()
        self._spent = True

    def _release(self):
        self._parents = ()
        self._backward_fn = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"


def _toposort(root):
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    return Tensor(arr)


def make_node(data, parents, backward_fn) -> Tensor:
    """Wrap an op result; drops the closure when no parent needs gradients."""
    if _grad_enabled[-1] and any(p.requires_grad or p._parents for p in parents):
        out = Tensor(data, requires_grad=True)
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
        return out
    return Tensor(data)


def _check_same_shape(a, b, op):
    if a.data.shape != b.data.shape:
        raise ShapeMismatchError(f"{op}: {a.data.shape} vs {b.data.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")

    def bw(g):
        a.accumulate_grad(g)
        b.accumulate_grad(g)

    return make_node(a.data + b.data, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")

    def bw(g):
        a.accumulate_grad(g)
        b.accumulate_grad(-g)

    return make_node(a.data - b.data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")
    a_data, b_data = a.data, b.data

    def bw(g):
        a.accumulate_grad(g * b_data)
        b.accumulate_grad(g * a_data)

    return make_node(a_data * b_data, (a, b), bw)


def scale(a: Tensor, k: float) -> Tensor:
    def bw(g):
        a.accumulate_grad(g * k)

    return make_node(a.data * k, (a,), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a_data, b_data = a.data, b.data

    def bw(g):
        a.accumulate_grad(g @ b_data.T)
        b.accumulate_grad(a_data.T @ g)

    return make_node(a_data @ b_data, (a, b), bw)


def sigmoid(x: Tensor) -> Tensor:
    y = expit(x.data)

    def bw(g):
        x.accumulate_grad(g * y * (1.0 - y))

    return make_node(y, (x,), bw)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def bw(g):
        x.accumulate_grad(g * (1.0 - y * y))

    return make_node(y, (x,), bw)


def prelu(x: Tensor, alpha: Tensor) -> Tensor:
    """Per-channel PReLU; alpha has shape (C,) matching x's leading axis."""
    xd = x.data
    slope = alpha.data.reshape((-1,) + (1,) * (xd.ndim - 1))
    pos = xd > 0
    y = np.where(pos, xd, slope * xd)

    def bw(g):
        x.accumulate_grad(np.where(pos, g, slope * g))
        neg = np.where(pos, 0.0, g * xd)
        alpha.accumulate_grad(neg.reshape(xd.shape[0], -1).sum(axis=1))

    return make_node(y, (x, alpha), bw)


def concat(parts, axis=0) -> Tensor:
    datas = [p.data for p in parts]
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        for p, piece in zip(parts, np.split(g, splits, axis=axis)):
            p.accumulate_grad(piece)

    return make_node(np.concatenate(datas, axis=axis), tuple(parts), bw)


def narrow(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def bw(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        x.accumulate_grad(full)

    return make_node(x.data[idx].copy(), (x,), bw)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.data.shape

    def bw(g):
        x.accumulate_grad(g.reshape(old))

    return make_node(x.data.reshape(shape).copy(), (x,), bw)


def moveaxis(x: Tensor, src: int, dst: int) -> Tensor:
    def bw(g):
        x.accumulate_grad(np.moveaxis(g, dst, src))

    return make_node(np.ascontiguousarray(np.moveaxis(x.data, src, dst)), (x,), bw)


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size

    def bw(g):
        x.accumulate_grad(np.full_like(x.data, float(g) / n))

    return make_node(np.asarray(x.data.mean()), (x,), bw)


def sum_all(x: Tensor) -> Tensor:
    def bw(g):
        x.accumulate_grad(np.full_like(x.data, float(g)))

    return make_node(np.asarray(x.data.sum()), (x,), bw)


def square(x: Tensor) -> Tensor:
    xd = x.data

    def bw(g):
        x.accumulate_grad(2.0 * g * xd)

    return make_node(xd * xd, (x,), bw)
