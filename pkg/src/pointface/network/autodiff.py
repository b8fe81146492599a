"""Minimal reverse-mode differentiation over dense float64 arrays.

Each op returns a :class:`Tensor` that remembers its parents and a closure
mapping the upstream gradient to one gradient per parent. ``backward`` walks
the graph in reverse topological order, so gradient sums always happen in
the same order and results are reproducible bit for bit.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, parents: Sequence["Tensor"] = (),
                 backward: Optional[Callable] = None, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents = tuple(parents)
        self._backward = backward
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self, grad=None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("grad must be given for non-scalar outputs")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
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
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        pending = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pg if key not in pending else pending[key] + pg


def constant(x) -> Tensor:
    return Tensor(x)


def parameter(x, name: str = "") -> Tensor:
    return Tensor(x, requires_grad=True, name=name)


def _needs(*ts: Tensor) -> bool:
    return any(t.requires_grad for t in ts)


def matmul(x: Tensor, w: Tensor) -> Tensor:
    out = x.data @ w.data

    def back(g):
        return (g @ w.data.T if x.requires_grad else None, x.data.T @ g if w.requires_grad else None)

    return Tensor(out, _needs(x, w), (x, w), back)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """``x + b`` with ``b`` broadcast along the leading axes."""

    def back(g):
        return g, g.reshape(-1, g.shape[-1]).sum(axis=0)

    return Tensor(x.data + b.data, _needs(x, b), (x, b), back)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)

    def back(g):
        return (np.where(out > 0, g, 0.0),)

    return Tensor(out, x.requires_grad, (x,), back)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return Tensor(x.data.reshape(shape), x.requires_grad, (x,), lambda g: (g.reshape(old),))


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    sizes = [t.shape[axis] for t in xs]
    cuts = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=axis))

    return Tensor(np.concatenate([t.data for t in xs], axis=axis), _needs(*xs), tuple(xs), back)


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """``x.data[index]`` for a 2-D ``x``; the backward pass scatter-adds."""
    index = np.asarray(index, dtype=np.intp)
    rows = x.shape[0]

    def back(g):
        g2 = g.reshape(-1, g.shape[-1])
        out = np.zeros((rows, g2.shape[1]))
        np.add.at(out, index.reshape(-1), g2)
        return (out,)

    return Tensor(x.data[index], x.requires_grad, (x,), back)


def max_pool(x: Tensor, axis: int) -> Tensor:
    """Maximum over ``axis``; the gradient goes to the first maximising entry."""
    arg = np.expand_dims(np.argmax(x.data, axis=axis), axis)
    out = np.take_along_axis(x.data, arg, axis=axis)
    shape = x.shape

    def back(g):
        full = np.zeros(shape)
        np.put_along_axis(full, arg, np.expand_dims(g, axis), axis=axis)
        return (full,)

    return Tensor(np.squeeze(out, axis=axis), x.requires_grad, (x,), back)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.9, eps: float = 1e-5) -> Tensor:
    """Per-channel normalisation of a 2-D ``x`` over its rows.

    In training mode batch statistics are used and the running statistics
    are updated in place as ``r <- momentum * r + (1 - momentum) * batch``.
    Otherwise the running statistics are treated as constants.
    """
    n = x.shape[0]
    if training:
        mean = x.data.mean(axis=0)
        xhat = x.data - mean
        var = np.einsum("ij,ij->j", xhat, xhat) / n
        inv = 1.0 / np.sqrt(var + eps)
        xhat *= inv
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mean
        running_var *= momentum
        running_var += (1.0 - momentum) * var * (n / max(n - 1, 1))

        def back(g):
            dgamma = np.einsum("ij,ij->j", g, xhat)
            dbeta = g.sum(axis=0)
            k = gamma.data * inv
            dx = g * k
            dx -= k * (dbeta / n)
            dx -= xhat * (k * dgamma / n)
            return dx, dgamma, dbeta
    else:
        inv = 1.0 / np.sqrt(running_var + eps)
        xhat = (x.data - running_mean) * inv

        def back(g):
            return g * (gamma.data * inv), np.einsum("ij,ij->j", g, xhat), g.sum(axis=0)

    out = xhat * gamma.data
    out += beta.data
    return Tensor(out, _needs(x, gamma, beta), (x, gamma, beta), back)


def l2_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Row-wise unit-norm rescaling of a 2-D ``x``."""
    norm = np.sqrt((x.data * x.data).sum(axis=1, keepdims=True))
    norm = np.maximum(norm, eps)
    y = x.data / norm

    def back(g):
        return ((g - y * (g * y).sum(axis=1, keepdims=True)) / norm,)

    return Tensor(y, x.requires_grad, (x,), back)
