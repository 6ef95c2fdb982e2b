# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the fused row kernels in ``_pykernels``.

Same signatures and semantics; inputs must be C-contiguous 2-D arrays.
"""
import numpy as np
cimport cython
from cython cimport floating
from libc.math cimport exp, log, sqrt, tanh

cdef double GELU_C = 0.7978845608028654
cdef double GELU_A = 0.044715


def softmax_fwd(floating[:, ::1] x, const unsigned char[:, ::1] mask):
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1], i, j
    out = np.zeros((n, m), dtype=np.asarray(x).dtype)
    cdef floating[:, ::1] y = out
    cdef double mx, s, e
    for i in range(n):
        mx = -1e300
        for j in range(m):
            if not mask[i, j] and x[i, j] > mx:
                mx = x[i, j]
        s = 0.0
        for j in range(m):
            if not mask[i, j]:
                e = exp(x[i, j] - mx)
                y[i, j] = <floating>e
                s += e
        for j in range(m):
            if not mask[i, j]:
                y[i, j] = <floating>(y[i, j] / s)
    return out


def softmax_bwd(floating[:, ::1] y, floating[:, ::1] gy):
    cdef Py_ssize_t n = y.shape[0], m = y.shape[1], i, j
    out = np.empty((n, m), dtype=np.asarray(y).dtype)
    cdef floating[:, ::1] gx = out
    cdef double dot
    for i in range(n):
        dot = 0.0
        for j in range(m):
            dot += gy[i, j] * y[i, j]
        for j in range(m):
            gx[i, j] = <floating>(y[i, j] * (gy[i, j] - dot))
    return out


def layernorm_fwd(floating[:, ::1] x, floating[::1] gain, floating[::1] bias, double eps):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    dt = np.asarray(x).dtype
    out = np.empty((n, d), dtype=dt)
    xh = np.empty((n, d), dtype=dt)
    rs = np.empty(n, dtype=dt)
    cdef floating[:, ::1] y = out
    cdef floating[:, ::1] xhat = xh
    cdef floating[::1] rstd = rs
    cdef double mu, var, r, c
    for i in range(n):
        mu = 0.0
        for j in range(d):
            mu += x[i, j]
        mu /= d
        var = 0.0
        for j in range(d):
            c = x[i, j] - mu
            var += c * c
        var /= d
        r = 1.0 / sqrt(var + eps)
        rstd[i] = <floating>r
        for j in range(d):
            c = (x[i, j] - mu) * r
            xhat[i, j] = <floating>c
            y[i, j] = <floating>(c * gain[j] + bias[j])
    return out, xh, rs


def layernorm_bwd(floating[:, ::1] gy, floating[:, ::1] xhat, floating[::1] rstd, floating[::1] gain):
    cdef Py_ssize_t n = gy.shape[0], d = gy.shape[1], i, j
    dt = np.asarray(gy).dtype
    out = np.empty((n, d), dtype=dt)
    gg = np.zeros(d, dtype=dt)
    gb = np.zeros(d, dtype=dt)
    cdef floating[:, ::1] gx = out
    cdef floating[::1] ggain = gg
    cdef floating[::1] gbias = gb
    cdef double s1, s2, gh
    for i in range(n):
        s1 = 0.0
        s2 = 0.0
        for j in range(d):
            gh = gy[i, j] * gain[j]
            s1 += gh
            s2 += gh * xhat[i, j]
            ggain[j] += gy[i, j] * xhat[i, j]
            gbias[j] += gy[i, j]
        for j in range(d):
            gh = gy[i, j] * gain[j]
            gx[i, j] = <floating>((rstd[i] / d) * (d * gh - s1 - xhat[i, j] * s2))
    return out, gg, gb


def gelu_fwd(floating[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1], i, j
    out = np.empty((n, m), dtype=np.asarray(x).dtype)
    cdef floating[:, ::1] y = out
    cdef double v
    for i in range(n):
        for j in range(m):
            v = x[i, j]
            y[i, j] = <floating>(0.5 * v * (1.0 + tanh(GELU_C * (v + GELU_A * v * v * v))))
    return out


def gelu_bwd(floating[:, ::1] x, floating[:, ::1] gy):
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1], i, j
    out = np.empty((n, m), dtype=np.asarray(x).dtype)
    cdef floating[:, ::1] gx = out
    cdef double v, t
    for i in range(n):
        for j in range(m):
            v = x[i, j]
            t = tanh(GELU_C * (v + GELU_A * v * v * v))
            gx[i, j] = <floating>(gy[i, j] * (0.5 * (1.0 + t)
                       + 0.5 * v * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * v * v)))
    return out


def xent_fwd(floating[:, ::1] logits, const long[::1] targets, double smoothing):
    cdef Py_ssize_t n = logits.shape[0], v = logits.shape[1], i, j
    dt = np.asarray(logits).dtype
    loss_arr = np.empty(n, dtype=dt)
    probs_arr = np.empty((n, v), dtype=dt)
    cdef floating[::1] loss = loss_arr
    cdef floating[:, ::1] probs = probs_arr
    cdef double mx, s, e, inv, lse, sum_logit, mean_logp, nll
    for i in range(n):
        mx = logits[i, 0]
        for j in range(1, v):
            if logits[i, j] > mx:
                mx = logits[i, j]
        s = 0.0
        sum_logit = 0.0
        for j in range(v):
            e = exp(logits[i, j] - mx)
            probs[i, j] = <floating>e
            s += e
            sum_logit += logits[i, j]
        lse = log(s)
        inv = 1.0 / s
        for j in range(v):
            probs[i, j] = <floating>(probs[i, j] * inv)
        mean_logp = sum_logit / v - mx - lse
        nll = -(logits[i, targets[i]] - mx - lse)
        if smoothing > 0.0:
            nll = (1.0 - smoothing) * nll - smoothing * mean_logp
        loss[i] = <floating>nll
    return loss_arr, probs_arr


def xent_bwd(floating[:, ::1] probs, const long[::1] targets, double smoothing, floating[::1] gloss):
    cdef Py_ssize_t n = probs.shape[0], v = probs.shape[1], i, j
    out = np.empty((n, v), dtype=np.asarray(probs).dtype)
    cdef floating[:, ::1] g = out
    cdef double u = smoothing / v
    for i in range(n):
        for j in range(v):
            g[i, j] = <floating>((probs[i, j] - u) * gloss[i])
        g[i, targets[i]] = <floating>(g[i, targets[i]] - (1.0 - smoothing) * gloss[i])
    return out
