"""Numpy implementations of the fused row kernels.

Every function works on 2-D C-contiguous arrays (rows x cols) of float32 or
float64 and returns arrays of the same dtype. ``_ckernels.pyx`` mirrors these
signatures exactly.
"""
import numpy as np

MASK_FILL = -1e9
GELU_C = 0.7978845608028654  # sqrt(2 / pi)
GELU_A = 0.044715


def softmax_fwd(x, mask):
    mask = mask.view(bool)
    z = np.where(mask, MASK_FILL, x)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)
    y[mask] = 0.0
    return y.astype(x.dtype, copy=False)


def softmax_bwd(y, gy):
    return y * (gy - (gy * y).sum(axis=1, keepdims=True))


def layernorm_fwd(x, gain, bias, eps):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gain + bias, xhat, rstd[:, 0].astype(x.dtype, copy=False)


def layernorm_bwd(gy, xhat, rstd, gain):
    d = xhat.shape[1]
    gxhat = gy * gain
    gx = (rstd[:, None] / d) * (
        d * gxhat
        - gxhat.sum(axis=1, keepdims=True)
        - xhat * (gxhat * xhat).sum(axis=1, keepdims=True)
    )
    return gx, (gy * xhat).sum(axis=0), gy.sum(axis=0)


def gelu_fwd(x):
    return 0.5 * x * (1.0 + np.tanh(GELU_C * (x + GELU_A * x**3)))


def gelu_bwd(x, gy):
    inner = GELU_C * (x + GELU_A * x**3)
    t = np.tanh(inner)
    dinner = GELU_C * (1.0 + 3.0 * GELU_A * x * x)
    return gy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner)


def xent_fwd(logits, targets, smoothing):
    """Per-row cross-entropy against (optionally smoothed) one-hot targets.

    Returns ``(loss, probs)`` where ``loss`` has one entry per row.
    """
    m = logits.max(axis=1, keepdims=True)
    z = logits - m
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    rows = np.arange(logits.shape[0])
    nll = -logp[rows, targets]
    if smoothing > 0.0:
        nll = (1.0 - smoothing) * nll - smoothing * logp.mean(axis=1)
    return nll.astype(logits.dtype, copy=False), np.exp(logp)


def xent_bwd(probs, targets, smoothing, gloss):
    g = probs.copy()
    if smoothing > 0.0:
        g -= smoothing / probs.shape[1]
        g[np.arange(probs.shape[0]), targets] -= 1.0 - smoothing
    else:
        g[np.arange(probs.shape[0]), targets] -= 1.0
    return g * gloss[:, None]
