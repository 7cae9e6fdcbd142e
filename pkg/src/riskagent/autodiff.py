"""Minimal tape-free reverse-mode autodiff over numpy arrays.

Each ``Tensor`` remembers its parents and a closure that pushes the
upstream gradient back to them; ``backward`` walks the graph in reverse
topological order. Only the operations the policy losses need exist.
"""
from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, parents: Sequence["Tensor"] = (), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = tuple(parents)
        self._backward = backward

    def __repr__(self):
        return f"Tensor({self.data!r})"

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)

        def back(g):
            return _unbroadcast(g, self.shape), _unbroadcast(g, other.shape)

        return Tensor(self.data + other.data, (self, other), back)

    __radd__ = __add__

    def __neg__(self):
        return Tensor(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data

        def back(g):
            return _unbroadcast(g * b, self.shape), _unbroadcast(g * a, other.shape)

        return Tensor(a * b, (self, other), back)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data

        def back(g):
            return _unbroadcast(g / b, self.shape), _unbroadcast(-g * a / (b * b), other.shape)

        return Tensor(a / b, (self, other), back)

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __matmul__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data

        def back(g):
            if a.ndim == 1:
                return g @ b.T, np.outer(a, g)
            return g @ b.T, a.T @ g

        return Tensor(a @ b, (self, other), back)

    def __getitem__(self, idx):
        shape = self.shape

        def back(g):
            out = np.zeros(shape)
            np.add.at(out, idx, g)
            return (out,)

        return Tensor(self.data[idx], (self,), back)

    # -- elementwise --------------------------------------------------------

    def tanh(self):
        y = np.tanh(self.data)
        return Tensor(y, (self,), lambda g: (g * (1.0 - y * y),))

    def exp(self):
        y = np.exp(self.data)
        return Tensor(y, (self,), lambda g: (g * y,))

    def log(self):
        x = self.data
        return Tensor(np.log(x), (self,), lambda g: (g / x,))

    def square(self):
        x = self.data
        return Tensor(x * x, (self,), lambda g: (2.0 * g * x,))

    def clip(self, lo, hi):
        x = self.data
        inside = ((x >= lo) & (x <= hi)).astype(np.float64)
        return Tensor(np.clip(x, lo, hi), (self,), lambda g: (g * inside,))

    def relu(self):
        x = self.data
        mask = (x > 0).astype(np.float64)
        return Tensor(x * mask, (self,), lambda g: (g * mask,))

    # -- reductions ---------------------------------------------------------

    def sum(self, axis=None):
        shape = self.shape

        def back(g):
            if axis is None:
                return (np.broadcast_to(g, shape).copy(),)
            return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

        return Tensor(self.data.sum(axis=axis), (self,), back)

    def mean(self, axis=None):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis) * (1.0 / n)

    def segment_sum(self, ids: np.ndarray, n_segments: int):
        """Sum 1-D entries into ``n_segments`` buckets given by ``ids``."""
        out = np.zeros(n_segments)
        np.add.at(out, ids, self.data)
        return Tensor(out, (self,), lambda g: (g[ids],))

    # -- graph --------------------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar, got shape {self.shape}")
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def minimum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    pick_a = (a.data <= b.data).astype(np.float64)

    def back(g):
        return _unbroadcast(g * pick_a, a.shape), _unbroadcast(g * (1.0 - pick_a), b.shape)

    return Tensor(np.minimum(a.data, b.data), (a, b), back)


def leaf(x) -> Tensor:
    """A fresh differentiable input (a copy of ``x``)."""
    return Tensor(np.array(x, dtype=np.float64))


def grad(loss: Tensor, wrt: Iterable[Tensor]) -> list[np.ndarray]:
    """Gradients of scalar ``loss`` with respect to each leaf in ``wrt``.

    Leaves the loss does not depend on get zeros.
    """
    wrt = list(wrt)
    if not isinstance(loss, Tensor):
        return [np.zeros_like(w.data) for w in wrt]
    if loss.data.size != 1:
        raise ValueError(f"gradient needs a scalar loss, got shape {loss.shape}")
    for w in wrt:
        w.grad = None
    loss.backward()
    return [np.zeros_like(w.data) if w.grad is None else w.grad for w in wrt]
