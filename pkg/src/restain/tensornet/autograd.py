"""Reverse-mode differentiation over float64 NCHW arrays.

Each operation returns a new :class:`Tensor` holding references to its inputs
and a closure that pushes the output gradient back to them. ``backward`` walks
the recorded graph once and then releases it.
"""

from __future__ import annotations

import numpy as np


class GraphError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_released")

    def __init__(self, data, requires_grad: bool = False, name: str = "", _parents=(), _backward=None):
        data = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(data)):
            raise FloatingPointError(f"non-finite values produced by {name or 'tensor'}")
        self.data = data
        self.grad = np.zeros_like(data)
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self.name = name
        self._parents = _parents
        self._backward = _backward
        self._released = False

    def __repr__(self):
        return f"Tensor(name={self.name!r}, shape={self.shape})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable ``grad`` buffer.

        The graph is released afterwards; calling again without a new forward
        pass raises :class:`GraphError`.
        """
        if self.data.size != 1:
            raise GraphError("backward needs a scalar output")
        if self._released:
            raise GraphError("graph already consumed by a previous backward; run forward again")

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

        for node in order:
            if node._backward is not None:
                node.zero_grad()
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is None:
                continue
            node._backward(node.grad)
            for p in node._parents:
                if not np.all(np.isfinite(p.grad)):
                    raise FloatingPointError(f"non-finite gradient in {node.name}")
        for node in order:
            if node._backward is not None:
                node._backward = None
                node._parents = ()
                node._released = True

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __getitem__(self, idx):
        return take(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b, name: str = "add") -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        a.grad += _unbroadcast(g, a.shape)
        b.grad += _unbroadcast(g, b.shape)

    return Tensor(a.data + b.data, name=name, _parents=(a, b), _backward=backward)


def mul(a, b, name: str = "mul") -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        a.grad += _unbroadcast(g * b.data, a.shape)
        b.grad += _unbroadcast(g * a.data, b.shape)

    return Tensor(a.data * b.data, name=name, _parents=(a, b), _backward=backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        a.grad -= g

    return Tensor(-a.data, name="neg", _parents=(a,), _backward=backward)


def unary(a: Tensor, fn, dfn, name: str) -> Tensor:
    """Elementwise op with value ``fn(x)`` and derivative ``dfn(x)``."""

    def backward(g):
        a.grad += g * dfn(a.data)

    return Tensor(fn(a.data), name=name, _parents=(a,), _backward=backward)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def backward(g):
        a.grad += g * out

    return Tensor(out, name="exp", _parents=(a,), _backward=backward)


def log(a: Tensor) -> Tensor:
    return unary(a, np.log, lambda x: 1.0 / x, "log")


def abs_(a: Tensor) -> Tensor:
    return unary(a, np.abs, np.sign, "abs")


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))

    def backward(g):
        a.grad += g * out * (1.0 - out)

    return Tensor(out, name="sigmoid", _parents=(a,), _backward=backward)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def backward(g):
        a.grad += g * (1.0 - out**2)

    return Tensor(out, name="tanh", _parents=(a,), _backward=backward)


def leaky_relu(a: Tensor, slope: float = 0.2, name: str = "leaky_relu") -> Tensor:
    return unary(a, lambda x: np.where(x > 0, x, slope * x),
                 lambda x: np.where(x > 0, 1.0, slope), name)


def clamp(a: Tensor, lo: float | None = None, hi: float | None = None, name: str = "clamp") -> Tensor:
    """Clip values; the gradient is zero where clipping is active."""

    def fn(x):
        return np.clip(x, lo, hi)

    def dfn(x):
        keep = np.ones_like(x)
        if lo is not None:
            keep = keep * (x >= lo)
        if hi is not None:
            keep = keep * (x <= hi)
        return keep

    return unary(a, fn, dfn, name)


def mean(a: Tensor) -> Tensor:
    n = a.data.size

    def backward(g):
        a.grad += g / n

    return Tensor(a.data.mean(), name="mean", _parents=(a,), _backward=backward)


def sum_(a: Tensor) -> Tensor:
    def backward(g):
        a.grad += g * np.ones_like(a.data)

    return Tensor(a.data.sum(), name="sum", _parents=(a,), _backward=backward)


def take(a: Tensor, idx) -> Tensor:
    def backward(g):
        a.grad[idx] += g

    return Tensor(a.data[idx], name="slice", _parents=(a,), _backward=backward)


def concat(tensors, axis: int = 1, name: str = "concat") -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        for t, part in zip(tensors, np.split(g, sizes, axis=axis)):
            t.grad += part

    return Tensor(np.concatenate([t.data for t in tensors], axis=axis), name=name,
                  _parents=tuple(tensors), _backward=backward)


def channel_mix(x: Tensor, matrix, bias=None, name: str = "channel_mix") -> Tensor:
    """out[n, o] = sum_c matrix[o, c] * x[n, c] + bias[o] on NCHW tensors."""
    matrix = np.asarray(matrix, dtype=np.float64)
    out = np.einsum("oc,nchw->nohw", matrix, x.data)
    if bias is not None:
        out = out + np.asarray(bias, dtype=np.float64)[None, :, None, None]

    def backward(g):
        x.grad += np.einsum("oc,nohw->nchw", matrix, g)

    return Tensor(out, name=name, _parents=(x,), _backward=backward)


def upsample2x(x: Tensor, name: str = "upsample") -> Tensor:
    """Nearest-neighbour upsampling by 2 along H and W."""
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def backward(g):
        n, c, h, w = x.shape
        x.grad += g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5))

    return Tensor(out, name=name, _parents=(x,), _backward=backward)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None, stride: int = 1, pad: int = 0,
           name: str = "conv2d") -> Tensor:
    """Zero-padded cross-correlation.

    out[n,o,i,j] = b[o] + sum_{c,u,v} w[o,c,u,v] * xpad[n,c,i*s+u,j*s+v]
    """
    n, c, h, wd = x.shape
    o, c_w, k, k2 = w.shape
    if c != c_w or k != k2:
        raise ValueError(f"{name}: input has {c} channels, kernel expects {c_w} (kernel {k}x{k2})")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    hp, wp = xp.shape[2], xp.shape[3]
    ho, wo = (hp - k) // stride + 1, (wp - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"{name}: input {h}x{wd} too small for kernel {k}")
    # channel-major im2col: cols[c, u, v, n, i, j] = xp[n, c, u + s*i, v + s*j]
    xp_c = xp.transpose(1, 0, 2, 3)
    cols = np.empty((c, k, k, n, ho, wo))
    for u in range(k):
        for v in range(k):
            cols[:, u, v] = xp_c[:, :, u:u + stride * ho:stride, v:v + stride * wo:stride]
    cols = cols.reshape(c * k * k, n * ho * wo)
    wmat = w.data.reshape(o, -1)
    out = wmat @ cols
    if b is not None:
        out += b.data[:, None]
    out = out.reshape(o, n, ho, wo).transpose(1, 0, 2, 3)

    def backward(g):
        gm = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(o, n * ho * wo)
        w.grad += (gm @ cols.T).reshape(w.shape)
        if b is not None:
            b.grad += gm.sum(axis=1)
        dcols = (wmat.T @ gm).reshape(c, k, k, n, ho, wo)
        dxp = np.zeros((c, n, hp, wp))
        for u in range(k):
            for v in range(k):
                dxp[:, :, u:u + stride * ho:stride, v:v + stride * wo:stride] += dcols[:, u, v]
        dxp = dxp.transpose(1, 0, 2, 3)
        x.grad += dxp[:, :, pad:pad + h, pad:pad + wd] if pad else dxp

    parents = (x, w) if b is None else (x, w, b)
    return Tensor(out, name=name, _parents=parents, _backward=backward)
