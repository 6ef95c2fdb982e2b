"""Differentiable operations.

Each op computes its forward value with numpy (or a fused kernel) and
registers a closure that pushes the upstream gradient into its inputs.
"""
from __future__ import annotations

import numpy as np

from ..errors import FullyMaskedRow
from . import kernels
from .autograd import Tensor, make_node


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b, a.dtype if isinstance(a, Tensor) else None)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return make_node(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return make_node(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return make_node(a.data * b.data, (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    def bw(g):
        a._accumulate(g * c)

    return make_node(a.data * c, (a,), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes; ``b`` may be a 2-D weight."""

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            if b.data.ndim == 2 and a.data.ndim > 2:
                a2 = a.data.reshape(-1, a.shape[-1])
                b._accumulate(a2.T @ g.reshape(-1, g.shape[-1]))
            else:
                b._accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return make_node(a.data @ b.data, (a, b), bw)


def reshape(a: Tensor, shape) -> Tensor:
    def bw(g):
        a._accumulate(g.reshape(a.shape))

    return make_node(a.data.reshape(shape), (a,), bw)


def transpose(a: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)

    def bw(g):
        a._accumulate(g.transpose(inv))

    return make_node(a.data.transpose(axes), (a,), bw)


def swap_last(a: Tensor) -> Tensor:
    axes = list(range(a.data.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup ``table[ids]``; ``ids`` is an integer array of any shape."""
    ids = np.asarray(ids, dtype=np.int64)

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        table._accumulate(gt)

    return make_node(table.data[ids], (table,), bw)


def take_rows(a: Tensor, idx) -> Tensor:
    """Select rows of a 2-D tensor."""
    idx = np.asarray(idx, dtype=np.int64)

    def bw(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        a._accumulate(ga)

    return make_node(a.data[idx], (a,), bw)


def sum(a: Tensor) -> Tensor:  # noqa: A001
    def bw(g):
        a._accumulate(np.broadcast_to(g, a.shape).copy())

    return make_node(np.asarray(a.data.sum()), (a,), bw)


def mean(a: Tensor) -> Tensor:
    n = a.data.size

    def bw(g):
        a._accumulate(np.full(a.shape, g / n, dtype=a.dtype))

    return make_node(np.asarray(a.data.mean()), (a,), bw)


def dot(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(g * a.data)

    return make_node(np.asarray((a.data * b.data).sum()), (a, b), bw)


def relu(a: Tensor) -> Tensor:
    def bw(g):
        a._accumulate(g * (a.data > 0))

    return make_node(np.maximum(a.data, 0), (a,), bw)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def bw(g):
        a._accumulate(g * (1 - y * y))

    return make_node(y, (a,), bw)


def _rows(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x.reshape(-1, x.shape[-1]))


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    x2 = _rows(a.data)

    def bw(g):
        a._accumulate(kernels.gelu_bwd(x2, _rows(g)).reshape(a.shape))

    return make_node(kernels.gelu_fwd(x2).reshape(a.shape), (a,), bw)


def masked_softmax(logits: Tensor, mask) -> Tensor:
    """Softmax over the last axis with ``mask == True`` entries excluded.

    ``mask`` broadcasts against ``logits``. Masked outputs are exactly 0.
    Raises :class:`FullyMaskedRow` if some row has nothing left to attend to.
    """
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), logits.shape)
    m2 = np.ascontiguousarray(mask.reshape(-1, logits.shape[-1]))
    if m2.all(axis=1).any():
        raise FullyMaskedRow("masked_softmax: a row has no unmasked position")
    y2 = kernels.softmax_fwd(_rows(logits.data), m2.view(np.uint8))

    def bw(g):
        logits._accumulate(kernels.softmax_bwd(y2, _rows(g)).reshape(logits.shape))

    return make_node(y2.reshape(logits.shape), (logits,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    x2 = _rows(x.data)
    y2, xhat, rstd = kernels.layernorm_fwd(x2, gain.data, bias.data, eps)

    def bw(g):
        gx, gg, gb = kernels.layernorm_bwd(_rows(g), xhat, rstd, gain.data)
        if x.requires_grad:
            x._accumulate(gx.reshape(x.shape))
        if gain.requires_grad:
            gain._accumulate(gg)
        if bias.requires_grad:
            bias._accumulate(gb)

    return make_node(y2.reshape(x.shape), (x, gain, bias), bw)


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout; identity when ``train`` is false or ``p == 0``."""
    if not train or p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)

    def bw(g):
        x._accumulate(g * keep)

    return make_node(x.data * keep, (x,), bw)


def cross_entropy(logits: Tensor, targets, smoothing: float = 0.0, reduce: str = "mean") -> Tensor:
    """Cross-entropy of 2-D ``logits`` (rows x classes) against integer targets.

    ``reduce`` is ``"mean"`` or ``"sum"`` over rows.
    """
    targets = np.ascontiguousarray(targets, dtype=np.int64)
    x2 = np.ascontiguousarray(logits.data)
    n = x2.shape[0]
    loss, probs = kernels.xent_fwd(x2, targets, float(smoothing))
    w = 1.0 / n if reduce == "mean" else 1.0
    value = loss.sum() * w

    def bw(g):
        gl = np.full(n, float(g) * w, dtype=x2.dtype)
        logits._accumulate(kernels.xent_bwd(probs, targets, float(smoothing), gl))

    return make_node(np.asarray(value, dtype=x2.dtype), (logits,), bw)
