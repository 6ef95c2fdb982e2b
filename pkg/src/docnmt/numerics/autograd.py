"""Tape-based reverse-mode automatic differentiation over numpy arrays.

Operations record themselves on the innermost active :class:`Graph` of the
current thread. Outside a graph nothing is recorded, which is how inference
runs.
"""
from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from ..errors import NonScalarLoss

class _Local(threading.local):
    def __init__(self):
        self.graphs: list[Graph] = []


_local = _Local()


def _stack() -> list:
    return _local.graphs


class Tensor:
    """A dense array plus the bookkeeping needed to backpropagate into it."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g
        else:
            self.grad = self.grad + g

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

    # arithmetic sugar; the real definitions live in ops
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)


class Graph:
    """Ordered record of the operations executed while it is active.

    Nodes are appended as they are created, so the list is already in
    topological order and backward simply walks it in reverse.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "Graph":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _stack().pop()
        assert popped is self, "graphs must be exited in LIFO order"

    def __len__(self) -> int:
        return len(self.nodes)


def current_graph() -> Graph | None:
    s = _local.graphs
    return s[-1] if s else None


def make_node(data: np.ndarray, parents: Sequence[Tensor], backward: Callable[[np.ndarray], None]) -> Tensor:
    """Wrap an op result, recording it when a graph is active and any input needs grad."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._parents = ()
    out._backward = None
    g = current_graph()
    if g is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        g.nodes.append(out)
    else:
        out.requires_grad = False
    return out


def backward(graph: Graph, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Backpropagate from a scalar ``loss`` through ``graph``.

    Returns a map from every leaf tensor that received a gradient to that
    gradient; gradients are also left on ``tensor.grad``.
    """
    if loss.data.size != 1:
        raise NonScalarLoss(f"loss must be scalar, got shape {loss.shape}")
    loss.grad = np.ones_like(loss.data)
    leaves: dict[int, Tensor] = {}
    for node in reversed(graph.nodes):
        if node.grad is None:
            continue
        node._backward(node.grad)
        for p in node._parents:
            if p.requires_grad and p._backward is None:
                leaves[id(p)] = p
    return {t: t.grad for t in leaves.values() if t.grad is not None}
