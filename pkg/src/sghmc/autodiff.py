"""A small reverse-mode tape over numpy arrays.

Values carry an optional leading batch axis. Parameters enter as leaves and
usually have no batch axis, so binary ops broadcast and the backward pass sums
gradients back to each input's shape. Everything else stays dense and
explicit: matrix-vector products act on the last axis.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import special


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


@dataclass
class Node:
    op: str
    inputs: tuple
    value: np.ndarray
    backward: Callable | None = None
    requires_grad: bool = False


class Var:
    """Handle to a tape node; supports ``+ - *`` with other vars or constants."""

    __slots__ = ("tape", "index")

    def __init__(self, tape: "Tape", index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.index].value

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return self.tape.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return self.tape.sub(self, other)

    def __rsub__(self, other):
        return self.tape.sub(other, self)

    def __mul__(self, other):
        return self.tape.mul(self, other)

    __rmul__ = __mul__


@dataclass
class Tape:
    nodes: list = field(default_factory=list)

    # -- construction ------------------------------------------------------
    def _push(self, op, inputs, value, backward=None) -> Var:
        value = np.asarray(value, dtype=np.float64)
        req = any(self.nodes[i].requires_grad for i in inputs)
        self.nodes.append(Node(op, tuple(inputs), value, backward if req else None, req))
        return Var(self, len(self.nodes) - 1)

    def leaf(self, value, requires_grad: bool = True) -> Var:
        v = np.array(value, dtype=np.float64)
        self.nodes.append(Node("leaf", (), v, None, requires_grad))
        return Var(self, len(self.nodes) - 1)

    def const(self, value) -> Var:
        return self.leaf(value, requires_grad=False)

    def _lift(self, x) -> Var:
        if isinstance(x, Var):
            if x.tape is not self:
                raise ValueError("variable belongs to a different tape")
            return x
        return self.const(x)

    # -- ops ----------------------------------------------------------------
    def add(self, a, b) -> Var:
        a, b = self._lift(a), self._lift(b)
        sa, sb = a.shape, b.shape
        return self._push("add", (a.index, b.index), a.value + b.value,
                          lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))

    def sub(self, a, b) -> Var:
        a, b = self._lift(a), self._lift(b)
        sa, sb = a.shape, b.shape
        return self._push("sub", (a.index, b.index), a.value - b.value,
                          lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))

    def mul(self, a, b) -> Var:
        a, b = self._lift(a), self._lift(b)
        av, bv = a.value, b.value
        return self._push("mul", (a.index, b.index), av * bv,
                          lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))

    def scale(self, a, c: float) -> Var:
        a = self._lift(a)
        c = float(c)
        return self._push("scale", (a.index,), c * a.value, lambda g: (c * g,))

    def matvec(self, W, x) -> Var:
        """W (r, c) times x (..., c) along the last axis."""
        W, x = self._lift(W), self._lift(x)
        Wv, xv = W.value, x.value
        if Wv.ndim != 2 or xv.shape[-1] != Wv.shape[1]:
            raise ValueError(f"matvec shape mismatch: {Wv.shape} @ {xv.shape}")

        def back(g):
            gW = np.tensordot(g, xv, axes=(list(range(g.ndim - 1)), list(range(xv.ndim - 1)))) \
                if g.ndim > 1 else np.outer(g, xv)
            return gW, g @ Wv

        return self._push("matvec", (W.index, x.index), xv @ Wv.T, back)

    def inner(self, a, b) -> Var:
        """Inner product over the last axis."""
        a, b = self._lift(a), self._lift(b)
        av, bv = a.value, b.value
        if av.shape[-1] != bv.shape[-1]:
            raise ValueError("inner product length mismatch")

        def back(g):
            ge = np.asarray(g)[..., None]
            return _unbroadcast(ge * bv, av.shape), _unbroadcast(ge * av, bv.shape)

        return self._push("inner", (a.index, b.index), np.sum(av * bv, axis=-1), back)

    def tanh(self, a) -> Var:
        a = self._lift(a)
        t = np.tanh(a.value)
        return self._push("tanh", (a.index,), t, lambda g: (g * (1.0 - t * t),))

    def sigmoid(self, a) -> Var:
        a = self._lift(a)
        s = sigmoid(a.value)
        return self._push("sigmoid", (a.index,), s, lambda g: (g * s * (1.0 - s),))

    def relu(self, a) -> Var:
        """max(x, 0) with derivative 0 at x = 0."""
        a = self._lift(a)
        mask = a.value > 0
        return self._push("relu", (a.index,), np.where(mask, a.value, 0.0), lambda g: (g * mask,))

    def maximum(self, a, c: float) -> Var:
        """max(x, c) for a constant c; derivative 0 on ties."""
        a = self._lift(a)
        mask = a.value > c
        return self._push("max_const", (a.index,), np.where(mask, a.value, c), lambda g: (g * mask,))

    def square(self, a) -> Var:
        a = self._lift(a)
        av = a.value
        return self._push("square", (a.index,), av * av, lambda g: (2.0 * g * av,))

    def sum(self, a) -> Var:
        a = self._lift(a)
        shape = a.shape
        return self._push("sum", (a.index,), np.sum(a.value), lambda g: (np.full(shape, float(g)),))

    def mean(self, a) -> Var:
        a = self._lift(a)
        shape = a.shape
        n = a.value.size
        return self._push("mean", (a.index,), np.mean(a.value), lambda g: (np.full(shape, float(g) / n),))

    def concat(self, parts) -> Var:
        """Concatenate along the last axis."""
        vs = [self._lift(p) for p in parts]
        sizes = np.cumsum([v.shape[-1] for v in vs])[:-1]
        return self._push("concat", tuple(v.index for v in vs),
                          np.concatenate([v.value for v in vs], axis=-1),
                          lambda g: tuple(np.split(g, sizes, axis=-1)))

    def reshape(self, a, shape) -> Var:
        a = self._lift(a)
        old = a.shape
        return self._push("reshape", (a.index,), a.value.reshape(shape), lambda g: (g.reshape(old),))

    # -- backward ----------------------------------------------------------
    def backward(self, root: Var, seed: float = 1.0) -> list:
        """Gradients of a scalar root with respect to every node.

        Returns a list indexed like ``nodes``; entries for nodes that do not
        influence the root (or do not require gradients) are ``None``.
        """
        if root.value.shape != ():
            raise ValueError("backward needs a scalar root")
        grads: list = [None] * len(self.nodes)
        grads[root.index] = np.asarray(seed, dtype=np.float64)
        for i in range(root.index, -1, -1):
            g = grads[i]
            node = self.nodes[i]
            if g is None or node.backward is None:
                continue
            for j, gj in zip(node.inputs, node.backward(g)):
                if not self.nodes[j].requires_grad:
                    continue
                grads[j] = gj if grads[j] is None else grads[j] + gj
        return grads

    def grad(self, root: Var, leaves) -> list[np.ndarray]:
        """Gradients of ``root`` for the given leaves (zeros when unused)."""
        all_g = self.backward(root)
        return [np.zeros_like(l.value) if all_g[l.index] is None else all_g[l.index] for l in leaves]


def sigmoid(x):
    return special.expit(np.asarray(x, dtype=np.float64))
