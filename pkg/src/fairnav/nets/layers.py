"""Network building blocks on top of the autodiff tape: parameter stores,
linear layers, MLP stacks, the two-stream attention message encoder, and
the Adam optimizer.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class ShapeError(ValueError):
    pass


class ParamStore:
    """Ordered name -> Tensor mapping for one network."""

    def __init__(self, dtype=np.float32):
        self.params: dict[str, Tensor] = {}
        self.dtype = dtype

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name}")
        t = Tensor(np.asarray(data, dtype=self.dtype), requires_grad=True)
        self.params[name] = t
        return t

    def names(self) -> list[str]:
        return list(self.params.keys())

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]):
        for k, v in self.params.items():
            if k not in state:
                raise KeyError(f"missing parameter {k} in state")
            if state[k].shape != v.data.shape:
                raise ShapeError(f"shape mismatch for {k}")
            v.data = state[k].astype(self.dtype).copy()

    def copy_into(self, other: "ParamStore", rate: float = 1.0):
        """Polyak-blend parameters into another store: other <- (1-rate)*other + rate*self."""
        for k, v in self.params.items():
            o = other.params[k]
            if rate >= 1.0:
                o.data = v.data.copy()
            else:
                o.data = (1.0 - rate) * o.data + rate * v.data.astype(o.data.dtype)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Linear:
    def __init__(self, store: ParamStore, name: str, n_in: int, n_out: int,
                 rng: np.random.Generator, zero_init: bool = False):
        w = np.zeros((n_in, n_out)) if zero_init else _glorot(rng, n_in, n_out)
        self.W = store.add(f"{name}.W", w)
        self.b = store.add(f"{name}.b", np.zeros(n_out))
        self.n_in = n_in
        self.n_out = n_out

    def __call__(self, x: Tensor) -> Tensor:
        if x.data.ndim != 2 or x.data.shape[1] != self.n_in:
            raise ShapeError(
                f"expected (batch, {self.n_in}) input, got {x.data.shape}"
            )
        return x @ self.W + self.b


class Mlp:
    """FC stack with ReLU between layers and a linear final layer."""

    def __init__(self, store: ParamStore, name: str, widths: Sequence[int],
                 rng: np.random.Generator, zero_last: bool = False):
        self.layers = []
        for k in range(len(widths) - 1):
            last = k == len(widths) - 2
            self.layers.append(
                Linear(store, f"{name}.fc{k}", widths[k], widths[k + 1], rng,
                       zero_init=zero_last and last)
            )

    def __call__(self, x: Tensor) -> Tensor:
        for k, layer in enumerate(self.layers):
            x = layer(x)
            if k < len(self.layers) - 1:
                x = ad.relu(x)
        return x


class AttentionEncoder:
    """Two-stream scaled dot-product attention over variable-size message sets.

    Each stream projects its message rows to queries, keys, and values of
    width d, attends with a single query (the mean of the projected
    queries), and the two attended vectors are concatenated. Empty
    neighborhoods encode to the zero vector. Permutation-invariant by
    construction.
    """

    def __init__(self, store: ParamStore, name: str, row_dims: tuple[int, int],
                 d: int, rng: np.random.Generator):
        self.d = d
        self.row_dims = row_dims
        self.proj = []
        for s, dim in enumerate(row_dims):
            self.proj.append(
                (
                    Linear(store, f"{name}.s{s}.q", dim, d, rng),
                    Linear(store, f"{name}.s{s}.k", dim, d, rng),
                    Linear(store, f"{name}.s{s}.v", dim, d, rng),
                )
            )

    @property
    def out_dim(self) -> int:
        return 2 * self.d

    def encode(self, streams: Sequence[Tensor | np.ndarray]) -> Tensor:
        """streams: one (K, row_dim) array per stream; K may be zero."""
        outs = []
        for (lq, lk, lv), rows in zip(self.proj, streams):
            if not isinstance(rows, Tensor):
                rows = Tensor(rows)
            if rows.data.shape[0] == 0:
                outs.append(Tensor(np.zeros((1, self.d))))
                continue
            q = lq(rows).mean(axis=0, keepdims=True)  # (1, d)
            k = lk(rows)  # (K, d)
            v = lv(rows)  # (K, d)
            att = ad.softmax(q @ _transpose(k) * (1.0 / math.sqrt(self.d)), axis=-1)
            outs.append(att @ v)  # (1, d)
        return ad.concat(outs, axis=1)

    def encode_np(self, streams: Sequence[np.ndarray]) -> np.ndarray:
        """Forward-only encoding used during rollouts."""
        return self.encode(streams).data[0]


def _transpose(x: Tensor) -> Tensor:
    def bw(g):
        x.grad += g.T

    return Tensor(x.data.T, _parents=(x,), _backward=bw,
                  requires_grad=x.requires_grad or bool(x._parents))


class Adam:
    """Adaptive-moment optimizer over one or more parameter stores."""

    def __init__(self, stores: Sequence[ParamStore], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.tensors: list[Tensor] = []
        for s in stores:
            self.tensors.extend(s.params.values())
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(t.data, dtype=np.float64) for t in self.tensors]
        self.v = [np.zeros_like(t.data, dtype=np.float64) for t in self.tensors]

    def step(self):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.tensors):
            g = p.grad
            if g is None:
                continue
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            update = self.lr * (self.m[i] / b1c) / (np.sqrt(self.v[i] / b2c) + self.eps)
            p.data = (p.data - update).astype(p.data.dtype)

    def state(self) -> dict:
        return {"t": self.t, "m": [m.copy() for m in self.m], "v": [v.copy() for v in self.v]}

    def load_state(self, state: dict):
        self.t = state["t"]
        self.m = [m.copy() for m in state["m"]]
        self.v = [v.copy() for v in state["v"]]
