"""Minimal reverse-mode differentiation over numpy arrays.

Each op returns a :class:`Tensor` that remembers its parents and a closure
mapping the output gradient to parent gradients. Heavier primitives
(softmax, layer norm, GELU, MSE) are fused so their backward passes are
written once, in closed form.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Run ops without recording the graph."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class BackwardError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")
    __array_ufunc__ = None  # make numpy defer to the reflected operators

    def __init__(self, data, requires_grad: bool = False, parents: tuple = (), backward: Callable | None = None):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return add(self, -float(other))
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def backward(self, grad=None):
        backward(self, grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: tuple, backward: Callable) -> Tensor:
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, backward)
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def backward(out: Tensor, grad=None) -> None:
    """Accumulate d(out)/d(leaf) into ``leaf.grad`` for every differentiable leaf."""
    if not out.requires_grad:
        raise BackwardError("no recorded forward pass: output does not depend on any trainable tensor")
    if grad is None:
        if out.data.size != 1:
            raise BackwardError("grad must be given for non-scalar outputs")
        grad = np.ones_like(out.data)
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(out, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    grads = {id(out): np.asarray(grad, dtype=out.data.dtype)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg


def gradients(loss: Tensor, params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Backpropagate ``loss`` and collect one gradient per named parameter."""
    for p in params.values():
        p.grad = None
    backward(loss)
    out = {}
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise BackwardError(f"non-finite gradient for parameter {name}")
        out[name] = g
        p.grad = None
    return out


# -- elementwise and structural ops -----------------------------------------

def add(a, b) -> Tensor:
    if isinstance(b, (int, float)):
        k = float(b)
        return _make(a.data + k, (a,), lambda g: (g,))
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    if isinstance(b, (int, float)):
        k = float(b)
        return _make(a.data * k, (a,), lambda g: (g * k,))
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if bd.ndim == 2 and ad.ndim > 2:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return _unbroadcast(ga, ad.shape), gb

    return _make(ad @ bd, (a, b), bw)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def broadcast_to(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make(np.broadcast_to(a.data, shape), (a,), lambda g: (_unbroadcast(g, old),))


def concat(items: Iterable[Tensor], axis: int) -> Tensor:
    items = [as_tensor(t) for t in items]
    sizes = [t.shape[axis] for t in items]
    splits = np.cumsum(sizes)[:-1]
    return _make(np.concatenate([t.data for t in items], axis=axis), tuple(items),
                 lambda g: tuple(np.split(g, splits, axis=axis)))


def take_rows(table: Tensor, index: np.ndarray) -> Tensor:
    """``table.data[index]`` with scatter-add backward."""
    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, index, g)
        return (gt,)

    return _make(table.data[index], (table,), bw)


# -- fused primitives -------------------------------------------------------

def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(x)
    y = e / e.sum(axis=axis, keepdims=True)
    return _make(y, (a,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xh = xc * inv
    gd = gamma.data

    def bw(g):
        gx_h = g * gd
        n = x.shape[-1]
        gx = inv / n * (n * gx_h - gx_h.sum(-1, keepdims=True) - xh * (gx_h * xh).sum(-1, keepdims=True))
        return gx, _unbroadcast(g * xh, gd.shape), _unbroadcast(g, beta.shape)

    return _make(xh * gd + beta.data, (a, gamma, beta), bw)


_GELU_C = float(np.sqrt(2.0 / np.pi))


def gelu(a: Tensor) -> Tensor:
    """tanh-approximated GELU."""
    x = a.data
    x2 = x * x
    u = _GELU_C * x * (1.0 + 0.044715 * x2)
    t = np.tanh(u)
    y = 0.5 * x * (1.0 + t)

    def bw(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du),)

    return _make(y, (a,), bw)


def mse(pred: Tensor, target) -> Tensor:
    """Mean squared error accumulated in float64; gradient in pred's dtype."""
    target = np.asarray(target.data if isinstance(target, Tensor) else target)
    diff = pred.data.astype(np.float64) - target.astype(np.float64)
    n = diff.size
    val = np.array(np.mean(diff * diff))

    def bw(g):
        return ((2.0 / n * float(g) * diff).astype(pred.data.dtype),)

    return _make(val, (pred,), bw)
