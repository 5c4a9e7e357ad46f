"""Tape-based reverse-mode automatic differentiation over numpy arrays.

Covers exactly the operator set the policy networks need: affine maps,
ReLU, tanh, exp/log, softmax, elementwise arithmetic with broadcasting,
concatenation, reductions, and elementwise min. Gradients are exact for
every operator; a finite-difference check runs as a standing test.

Training uses float32; pass dtype=np.float64 for numerically tight
gradient checks.
"""

from __future__ import annotations

from typing import Iterable

import numpy as np

DEFAULT_DTYPE = np.float32


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcasted gradient back down to the original shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None, _parents=(), _backward=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype or getattr(data, "dtype", None) or DEFAULT_DTYPE)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(DEFAULT_DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    # -- graph construction -------------------------------------------------

    def _track(self, *parents: "Tensor") -> bool:
        return any(p.requires_grad for p in parents)

    def backward(self, seed: np.ndarray | None = None):
        """Accumulate gradients into every reachable requires_grad tensor."""
        topo: list[Tensor] = []
        seen: set[int] = set()

        def visit(t: Tensor):
            if id(t) in seen:
                return
            seen.add(id(t))
            for p in t._parents:
                visit(p)
            topo.append(t)

        visit(self)
        for t in topo:
            t.grad = np.zeros_like(t.data)
        self.grad = (
            np.ones_like(self.data) if seed is None else np.asarray(seed, dtype=self.data.dtype)
        )
        for t in reversed(topo):
            if t._backward is not None:
                t._backward(t.grad)

    # -- operators ----------------------------------------------------------

    def _wrap(self, other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(
            np.asarray(other, dtype=self.data.dtype)
        )

    def __add__(self, other):
        other = self._wrap(other)
        out_data = self.data + other.data
        a, b = self, other

        def bw(g):
            if a.requires_grad or a._parents:
                a.grad += _unbroadcast(g, a.data.shape)
            if b.requires_grad or b._parents:
                b.grad += _unbroadcast(g, b.data.shape)

        return Tensor(out_data, _parents=(a, b), _backward=bw,
                      requires_grad=self._track(a, b))

    __radd__ = __add__

    def __neg__(self):
        a = self

        def bw(g):
            a.grad += -g

        return Tensor(-a.data, _parents=(a,), _backward=bw, requires_grad=a.requires_grad or bool(a._parents))

    def __sub__(self, other):
        return self + (-self._wrap(other))

    def __rsub__(self, other):
        return self._wrap(other) + (-self)

    def __mul__(self, other):
        other = self._wrap(other)
        a, b = self, other

        def bw(g):
            a.grad += _unbroadcast(g * b.data, a.data.shape)
            b.grad += _unbroadcast(g * a.data, b.data.shape)

        return Tensor(a.data * b.data, _parents=(a, b), _backward=bw,
                      requires_grad=self._track(a, b))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._wrap(other)
        a, b = self, other

        def bw(g):
            a.grad += _unbroadcast(g / b.data, a.data.shape)
            b.grad += _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)

        return Tensor(a.data / b.data, _parents=(a, b), _backward=bw,
                      requires_grad=self._track(a, b))

    def matmul(self, other: "Tensor") -> "Tensor":
        a, b = self, other

        def bw(g):
            a.grad += g @ b.data.T
            b.grad += a.data.T @ g

        return Tensor(a.data @ b.data, _parents=(a, b), _backward=bw,
                      requires_grad=self._track(a, b))

    __matmul__ = matmul

    def sum(self, axis=None, keepdims=False):
        a = self

        def bw(g):
            if axis is None:
                a.grad += np.broadcast_to(g, a.data.shape)
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                a.grad += np.broadcast_to(gg, a.data.shape)

        return Tensor(a.data.sum(axis=axis, keepdims=keepdims), _parents=(a,),
                      _backward=bw, requires_grad=a.requires_grad or bool(a._parents))

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def bw(g):
        x.grad += g * mask

    return Tensor(x.data * mask, _parents=(x,), _backward=bw,
                  requires_grad=x.requires_grad or bool(x._parents))


def tanh(x: Tensor) -> Tensor:
    out_data = np.tanh(x.data)

    def bw(g):
        x.grad += g * (1.0 - out_data * out_data)

    return Tensor(out_data, _parents=(x,), _backward=bw,
                  requires_grad=x.requires_grad or bool(x._parents))


def exp(x: Tensor) -> Tensor:
    out_data = np.exp(x.data)

    def bw(g):
        x.grad += g * out_data

    return Tensor(out_data, _parents=(x,), _backward=bw,
                  requires_grad=x.requires_grad or bool(x._parents))


def log(x: Tensor) -> Tensor:
    def bw(g):
        x.grad += g / x.data

    return Tensor(np.log(x.data), _parents=(x,), _backward=bw,
                  requires_grad=x.requires_grad or bool(x._parents))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        x.grad += out_data * (g - dot)

    return Tensor(out_data, _parents=(x,), _backward=bw,
                  requires_grad=x.requires_grad or bool(x._parents))


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse
    sm = np.exp(out_data)

    def bw(g):
        x.grad += g - sm * g.sum(axis=axis, keepdims=True)

    return Tensor(out_data, _parents=(x,), _backward=bw,
                  requires_grad=x.requires_grad or bool(x._parents))


def minimum(a: Tensor, b: Tensor) -> Tensor:
    take_a = a.data <= b.data

    def bw(g):
        a.grad += g * take_a
        b.grad += g * (~take_a)

    return Tensor(np.minimum(a.data, b.data), _parents=(a, b), _backward=bw,
                  requires_grad=a.requires_grad or b.requires_grad or bool(a._parents) or bool(b._parents))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp with straight-through-zero gradient outside the range."""
    inside = (x.data >= lo) & (x.data <= hi)

    def bw(g):
        x.grad += g * inside

    return Tensor(np.clip(x.data, lo, hi), _parents=(x,), _backward=bw,
                  requires_grad=x.requires_grad or bool(x._parents))


def concat(tensors: Iterable[Tensor], axis: int = -1) -> Tensor:
    ts = list(tensors)
    out_data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, o, s in zip(ts, offsets, sizes):
            idx = [slice(None)] * g.ndim
            idx[axis if axis >= 0 else g.ndim + axis] = slice(o, o + s)
            t.grad += g[tuple(idx)]

    return Tensor(out_data, _parents=tuple(ts), _backward=bw,
                  requires_grad=any(t.requires_grad or bool(t._parents) for t in ts))
