"""Define-by-run reverse-mode autodiff over dense float64 matrices.

A graph is rebuilt on every forward pass. Each :class:`Node` keeps its value,
a lazily allocated gradient and a closure that pushes its output gradient to
its parents. ``backward`` walks the DAG in reverse topological order, so a
node shared by several consumers is visited once, after all of them have
accumulated into it.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .errors import ConfigError, DimensionError


def as_matrix(x) -> np.ndarray:
    """Coerce ``x`` to a 2-D float64 array (scalars become 1x1, vectors 1xn)."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1)
    elif a.ndim != 2:
        raise DimensionError(f"expected a matrix, got array with shape {a.shape}")
    return a


class Node:
    __slots__ = ("value", "_grad", "parents", "_backward", "requires_grad")

    def __init__(
        self,
        value,
        parents: Sequence["Node"] = (),
        backward: Callable[[np.ndarray], None] | None = None,
        requires_grad: bool = True,
    ):
        self.value = as_matrix(value)
        self._grad: np.ndarray | None = None
        self.parents = tuple(parents)
        self._backward = backward
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.value)
        return self._grad

    def accumulate(self, g: np.ndarray) -> None:
        if self._grad is None:
            self._grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self._grad += g

    def zero_grad(self) -> None:
        self._grad = None

    def backward(self) -> None:
        """Backpropagate from this node, seeding its gradient with ones."""
        order = _topological_order(self)
        for node in order:
            node._grad = None
        self._grad = np.ones_like(self.value)
        for node in reversed(order):
            if node._backward is not None and node._grad is not None:
                node._backward(node._grad)

    def __add__(self, other: "Node") -> "Node":
        return add(self, other)

    def __mul__(self, other: "Node") -> "Node":
        return hadamard(self, other)

    def __matmul__(self, other: "Node") -> "Node":
        return matmul(self, other)

    def __repr__(self) -> str:
        return f"Node(shape={self.shape})"


def constant(x) -> Node:
    return Node(x, requires_grad=False)


def _topological_order(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
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


def _push(node: Node, g: np.ndarray) -> None:
    if node.requires_grad:
        node.accumulate(g)


def matmul(a: Node, b: Node) -> Node:
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    av, bv = a.value, b.value

    def backward(g):
        _push(a, g @ bv.T)
        _push(b, av.T @ g)

    return Node(av @ bv, (a, b), backward)


def add(a: Node, b: Node) -> Node:
    """Elementwise sum; ``b`` may be a 1 x cols row broadcast over rows of ``a``."""
    if a.shape == b.shape:
        def backward(g):
            _push(a, g)
            _push(b, g)
    elif b.shape == (1, a.shape[1]):
        def backward(g):
            _push(a, g)
            _push(b, g.sum(axis=0, keepdims=True))
    else:
        raise DimensionError(f"add shape mismatch: {a.shape} + {b.shape}")
    return Node(a.value + b.value, (a, b), backward)


def sub(a: Node, b: Node) -> Node:
    if a.shape != b.shape:
        raise DimensionError(f"sub shape mismatch: {a.shape} - {b.shape}")

    def backward(g):
        _push(a, g)
        _push(b, -g)

    return Node(a.value - b.value, (a, b), backward)


def scale(x: Node, c: float) -> Node:
    def backward(g):
        _push(x, c * g)

    return Node(c * x.value, (x,), backward)


def hadamard(a: Node, b: Node) -> Node:
    if a.shape != b.shape:
        raise DimensionError(f"hadamard shape mismatch: {a.shape} vs {b.shape}")
    av, bv = a.value, b.value

    def backward(g):
        _push(a, g * bv)
        _push(b, g * av)

    return Node(av * bv, (a, b), backward)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)


def sigmoid(x: Node) -> Node:
    s = _sigmoid(x.value)

    def backward(g):
        _push(x, g * s * (1.0 - s))

    return Node(s, (x,), backward)


def silu(x: Node) -> Node:
    xv = x.value
    s = _sigmoid(xv)

    def backward(g):
        _push(x, g * (s + xv * s * (1.0 - s)))

    return Node(xv * s, (x,), backward)


def dropout(x: Node, p: float, training: bool, rng: np.random.Generator | None) -> Node:
    """Inverted dropout: survivors are scaled by 1/(1-p) so eval mode is the identity."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ConfigError("training-mode dropout needs a generator")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)

    def backward(g):
        _push(x, g * mask)

    return Node(x.value * mask, (x,), backward)


def concat_cols(nodes: Sequence[Node]) -> Node:
    rows = nodes[0].shape[0]
    if any(n.shape[0] != rows for n in nodes):
        raise DimensionError("concat_cols needs equal row counts")
    bounds = np.cumsum([0] + [n.shape[1] for n in nodes])

    def backward(g):
        for n, lo, hi in zip(nodes, bounds[:-1], bounds[1:]):
            _push(n, g[:, lo:hi])

    return Node(np.concatenate([n.value for n in nodes], axis=1), nodes, backward)


def broadcast_rows(x: Node, rows: int) -> Node:
    """Repeat a single-row node ``rows`` times."""
    if x.shape[0] != 1:
        raise DimensionError(f"broadcast_rows needs a single row, got {x.shape}")

    def backward(g):
        _push(x, g.sum(axis=0, keepdims=True))

    return Node(np.repeat(x.value, rows, axis=0), (x,), backward)


def total(x: Node) -> Node:
    """Sum of all entries, as a 1x1 node."""
    def backward(g):
        _push(x, np.full(x.shape, g[0, 0]))

    return Node(x.value.sum(), (x,), backward)


def mean(x: Node) -> Node:
    return scale(total(x), 1.0 / x.value.size)


def mse_loss(pred: Node, target) -> Node:
    """Mean of squared elementwise differences, as a 1x1 node."""
    t = as_matrix(target)
    if pred.shape != t.shape:
        raise DimensionError(f"mse_loss shape mismatch: {pred.shape} vs {t.shape}")
    diff = pred.value - t
    n = diff.size

    def backward(g):
        _push(pred, g[0, 0] * 2.0 * diff / n)

    return Node(np.mean(diff * diff), (pred,), backward)
