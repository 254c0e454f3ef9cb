"""Minimal reverse-mode automatic differentiation over numpy arrays.

A ``Tensor`` wraps a float64 ndarray and records, per operation, a closure
that routes the upstream gradient to its parents.  ``backward()`` runs the
closures in reverse topological order.  Only the handful of ops needed by
the models and losses in this package are provided; everything is computed
in double precision so finite-difference checks are meaningful.

Ops on tensors none of whose parents require gradients skip graph
construction entirely, which keeps frozen-teacher forwards cheap.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Tensor", "concat", "log_softmax"]


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _lift(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    @staticmethod
    def _node(data, parents, backward) -> "Tensor":
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- basic introspection ---------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- arithmetic -------------------------------------------------------------

    def __add__(self, other):
        a, b = self, Tensor._lift(other)

        def backward(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g, b.data.shape))

        return Tensor._node(a.data + b.data, (a, b), backward)

    __radd__ = __add__

    def __mul__(self, other):
        a, b = self, Tensor._lift(other)

        def backward(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g * a.data, b.data.shape))

        return Tensor._node(a.data * b.data, (a, b), backward)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-Tensor._lift(other))

    def __rsub__(self, other):
        return Tensor._lift(other) + (-self)

    def __truediv__(self, scalar):
        if isinstance(scalar, Tensor):
            raise TypeError("tensor/tensor division is not supported; multiply by a reciprocal")
        return self * (1.0 / scalar)

    def __matmul__(self, other):
        a, b = self, Tensor._lift(other)
        if a.data.ndim != 2 or b.data.ndim != 2:
            raise ValueError("matmul expects 2-d operands; reshape first")

        def backward(g):
            if a.requires_grad:
                a._accum(g @ b.data.T)
            if b.requires_grad:
                b._accum(a.data.T @ g)

        return Tensor._node(a.data @ b.data, (a, b), backward)

    # -- elementwise nonlinearities ---------------------------------------------

    def exp(self):
        out_data = np.exp(self.data)

        def backward(g):
            self._accum(g * out_data)

        return Tensor._node(out_data, (self,), backward)

    def log(self):
        def backward(g):
            self._accum(g / self.data)

        return Tensor._node(np.log(self.data), (self,), backward)

    def tanh(self):
        out_data = np.tanh(self.data)

        def backward(g):
            self._accum(g * (1.0 - out_data * out_data))

        return Tensor._node(out_data, (self,), backward)

    def sigmoid(self):
        out_data = 1.0 / (1.0 + np.exp(-self.data))

        def backward(g):
            self._accum(g * out_data * (1.0 - out_data))

        return Tensor._node(out_data, (self,), backward)

    def abs(self):
        def backward(g):
            self._accum(g * np.sign(self.data))

        return Tensor._node(np.abs(self.data), (self,), backward)

    def clamp_min(self, bound: float):
        """max(x, bound); gradient passes only where x > bound."""
        mask = self.data > bound

        def backward(g):
            self._accum(g * mask)

        return Tensor._node(np.maximum(self.data, bound), (self,), backward)

    def clamped_log(self, floor: float = -80.0):
        """log(x) floored at ``floor``; gradient is zero on the floored entries.

        Safe on exact zeros (no 0 * inf in the backward pass), which the
        cross-entropy losses rely on for their 0*log(0) := 0 convention.
        """
        tiny = np.exp(floor)
        mask = self.data > tiny
        out_data = np.where(mask, np.log(np.maximum(self.data, tiny)), floor)

        def backward(g):
            self._accum(np.where(mask, g / np.maximum(self.data, tiny), 0.0))

        return Tensor._node(out_data, (self,), backward)

    # -- shape ops ----------------------------------------------------------------

    def reshape(self, *shape):
        src_shape = self.data.shape

        def backward(g):
            self._accum(g.reshape(src_shape))

        return Tensor._node(self.data.reshape(*shape), (self,), backward)

    def __getitem__(self, key):
        src_shape = self.data.shape
        fancy = isinstance(key, (np.ndarray, list)) or (
            isinstance(key, tuple) and any(isinstance(k, (np.ndarray, list)) for k in key)
        )

        def backward(g):
            if self.grad is None:
                self.grad = np.zeros(src_shape)
            if fancy:
                np.add.at(self.grad, key, g)
            else:
                # basic slices address disjoint elements, += is safe
                self.grad[key] += g

        return Tensor._node(self.data[key], (self,), backward)

    # -- reductions ------------------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        src_shape = self.data.shape

        def backward(g):
            if axis is None:
                self._accum(np.broadcast_to(g, src_shape).copy())
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                self._accum(np.broadcast_to(gg, src_shape).copy())

        return Tensor._node(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward)

    # -- autodiff driver -----------------------------------------------------------

    def backward(self) -> None:
        """Accumulate gradients of this (scalar) tensor w.r.t. graph leaves."""
        if self.data.size != 1:
            raise ValueError("backward() expects a scalar loss tensor")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [Tensor._lift(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accum(g[tuple(idx)])

    return Tensor._node(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    m = x.data.max(axis=axis, keepdims=True)
    shifted = x.data - m
    out_data = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(g):
        x._accum(g - np.exp(out_data) * g.sum(axis=axis, keepdims=True))

    return Tensor._node(out_data, (x,), backward)
