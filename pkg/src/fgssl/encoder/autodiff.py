"""A small reverse-mode tape over dense numpy arrays.

Only the ops the Vision Transformer needs are provided, each with a
hand-written adjoint.  Nodes record their parents and a closure that pushes the
node's gradient to them; :func:`backward` walks the graph in reverse
topological order.  Arrays keep the dtype of their inputs, so the same graph
runs in float32 for training and float64 for gradient checks.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "parents", "backward_fn", "requires_grad")

    def __init__(self, data, parents: Sequence["Tensor"] = (), backward_fn: Callable | None = None, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


def param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def const(data) -> Tensor:
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _node(data, parents, backward_fn) -> Tensor:
    out = Tensor(data, parents)
    if out.requires_grad:
        out.backward_fn = backward_fn
    else:
        out.parents = ()
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def bw(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.shape))

    return _node(out_data, (a, b), bw)


def scale(a: Tensor, factor: float) -> Tensor:
    factor = a.data.dtype.type(factor)

    def bw(g):
        a.accumulate(g * factor)

    return _node(a.data * factor, (a,), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` with numpy broadcasting; a 2-D ``b`` is treated as a weight matrix."""
    out_data = a.data @ b.data

    def bw(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            if b.data.ndim == 2:
                a2 = a.data.reshape(-1, a.data.shape[-1])
                b.accumulate(a2.T @ g.reshape(-1, g.shape[-1]))
            else:
                b.accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _node(out_data, (a, b), bw)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    def bw(g):
        a.accumulate(g.reshape(a.shape))

    return _node(a.data.reshape(shape), (a,), bw)


def transpose(a: Tensor, axes: tuple) -> Tensor:
    inverse = tuple(np.argsort(axes))

    def bw(g):
        a.accumulate(np.transpose(g, inverse))

    return _node(np.transpose(a.data, axes), (a,), bw)


def getitem(a: Tensor, idx) -> Tensor:
    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g) if _is_advanced(idx) else full.__setitem__(idx, g)
        a.accumulate(full)

    return _node(a.data[idx], (a,), bw)


def _is_advanced(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                t.accumulate(np.take(g, np.arange(lo, hi), axis=axis))

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw)


def broadcast_to(a: Tensor, shape: tuple) -> Tensor:
    def bw(g):
        a.accumulate(_unbroadcast(g, a.shape))

    return _node(np.broadcast_to(a.data, shape).copy(), (a,), bw)


def replace_rows(x: Tensor, mask: np.ndarray, token: Tensor) -> Tensor:
    """Where ``mask[..., i]`` is set, replace row ``x[..., i, :]`` with ``token``."""
    m = np.asarray(mask, dtype=bool)[..., None]
    out_data = np.where(m, token.data, x.data)

    def bw(g):
        if x.requires_grad:
            x.accumulate(np.where(m, 0, g))
        if token.requires_grad:
            token.accumulate(np.where(m, g, 0).reshape(-1, g.shape[-1]).sum(axis=0))

    return _node(out_data, (x, token), bw)


def softmax(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        a.accumulate(s * (g - (g * s).sum(axis=-1, keepdims=True)))

    return _node(s, (a,), bw)


def layer_norm(x: Tensor, weight: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + x.data.dtype.type(eps))
    xhat = xc * rstd
    out = xhat * weight.data + bias.data

    def bw(g):
        if weight.requires_grad:
            weight.accumulate((g * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0))
        if bias.requires_grad:
            bias.accumulate(g.reshape(-1, g.shape[-1]).sum(axis=0))
        if x.requires_grad:
            gh = g * weight.data
            n = x.data.dtype.type(x.shape[-1])
            dx = rstd * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).sum(axis=-1, keepdims=True) / n)
            x.accumulate(dx)

    return _node(out, (x, weight, bias), bw)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh-approximated GELU."""
    dt = x.data.dtype.type
    c, k = dt(_GELU_C), dt(0.044715)
    x2 = x.data * x.data
    t = np.tanh(c * x.data * (dt(1) + k * x2))
    out = dt(0.5) * x.data * (dt(1) + t)

    def bw(g):
        du = c * (dt(1) + dt(3) * k * x2)
        d = dt(0.5) * (dt(1) + t) + dt(0.5) * x.data * (dt(1) - t * t) * du
        x.accumulate(g * d)

    return _node(out, (x,), bw)


def l2_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    norm = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))
    norm = np.maximum(norm, x.data.dtype.type(eps))
    y = x.data / norm

    def bw(g):
        x.accumulate((g - y * (g * y).sum(axis=-1, keepdims=True)) / norm)

    return _node(y, (x,), bw)


def _topo_order(roots: Sequence[Tensor]) -> list[Tensor]:
    order, seen = [], set()
    stack = [(r, False) for r in roots]
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(roots: Sequence[Tensor], grads: Sequence[np.ndarray]) -> None:
    """Seed each root with its output gradient and propagate to every leaf."""
    for r, g in zip(roots, grads):
        if r.requires_grad:
            r.accumulate(np.asarray(g, dtype=r.data.dtype))
    for node in reversed(_topo_order(roots)):
        if node.backward_fn is not None and node.grad is not None:
            node.backward_fn(node.grad)
