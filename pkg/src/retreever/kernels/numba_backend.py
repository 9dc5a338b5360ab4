"""Numba-compiled hot kernels.

Same signatures and semantics as ``numpy_backend``. Row kernels loop over
rows so the row reduction, normalization and write-back fuse into one pass
without temporaries; the scatter kernel replaces np.add.at, which is very
slow for the long index vectors produced by embedding/gather backward.

Matrix multiplication is deliberately absent: np.matmul dispatches to BLAS,
which beats anything we could write here.

All loops are serial or write disjoint rows, so results are deterministic
regardless of thread count.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

_GELU_C = 0.7978845608028654
_GELU_A = 0.044715


@njit(cache=True)
def softmax_forward(x):
    n, w = x.shape
    p = np.empty_like(x)
    rowmax = np.empty(n, dtype=x.dtype)
    for i in range(n):
        mx = x[i, 0]
        for j in range(1, w):
            if x[i, j] > mx:
                mx = x[i, j]
        rowmax[i] = mx
        s = 0.0
        for j in range(w):
            e = math.exp(x[i, j] - mx)
            p[i, j] = e
            s += e
        inv = 1.0 / s
        for j in range(w):
            p[i, j] *= inv
    return p, rowmax


@njit(cache=True)
def softmax_backward(p, gout):
    n, w = p.shape
    gx = np.empty_like(p)
    for i in range(n):
        dot = 0.0
        for j in range(w):
            dot += p[i, j] * gout[i, j]
        for j in range(w):
            gx[i, j] = p[i, j] * (gout[i, j] - dot)
    return gx


@njit(cache=True)
def log_softmax_forward(x):
    n, w = x.shape
    logp = np.empty_like(x)
    rowmax = np.empty(n, dtype=x.dtype)
    for i in range(n):
        mx = x[i, 0]
        for j in range(1, w):
            if x[i, j] > mx:
                mx = x[i, j]
        rowmax[i] = mx
        s = 0.0
        for j in range(w):
            s += math.exp(x[i, j] - mx)
        lse = math.log(s)
        for j in range(w):
            logp[i, j] = x[i, j] - mx - lse
    return logp, rowmax


@njit(cache=True)
def log_softmax_backward(logp, gout):
    n, w = logp.shape
    gx = np.empty_like(logp)
    for i in range(n):
        s = 0.0
        for j in range(w):
            s += gout[i, j]
        for j in range(w):
            gx[i, j] = gout[i, j] - math.exp(logp[i, j]) * s
    return gx


@njit(cache=True)
def layernorm_forward(x, gain, bias, eps):
    n, w = x.shape
    out = np.empty_like(x)
    mean = np.empty(n, dtype=x.dtype)
    rstd = np.empty(n, dtype=x.dtype)
    for i in range(n):
        mu = 0.0
        for j in range(w):
            mu += x[i, j]
        mu /= w
        var = 0.0
        for j in range(w):
            d = x[i, j] - mu
            var += d * d
        var /= w
        rs = 1.0 / math.sqrt(var + eps)
        mean[i] = mu
        rstd[i] = rs
        for j in range(w):
            out[i, j] = (x[i, j] - mu) * rs * gain[j] + bias[j]
    return out, mean, rstd


@njit(cache=True)
def layernorm_backward(gout, x, gain, mean, rstd):
    n, w = x.shape
    gx = np.empty_like(x)
    ggain = np.zeros(w, dtype=x.dtype)
    gbias = np.zeros(w, dtype=x.dtype)
    for i in range(n):
        mu = mean[i]
        rs = rstd[i]
        m1 = 0.0
        m2 = 0.0
        for j in range(w):
            xhat = (x[i, j] - mu) * rs
            gxh = gout[i, j] * gain[j]
            m1 += gxh
            m2 += gxh * xhat
            ggain[j] += gout[i, j] * xhat
            gbias[j] += gout[i, j]
        m1 /= w
        m2 /= w
        for j in range(w):
            xhat = (x[i, j] - mu) * rs
            gx[i, j] = rs * (gout[i, j] * gain[j] - m1 - xhat * m2)
    return gx, ggain, gbias


@njit(cache=True)
def gelu_forward(x):
    n = x.shape[0]
    out = np.empty_like(x)
    for i in range(n):
        v = x[i]
        inner = _GELU_C * (v + _GELU_A * v * v * v)
        out[i] = 0.5 * v * (1.0 + math.tanh(inner))
    return out


@njit(cache=True)
def gelu_backward(x, gout):
    n = x.shape[0]
    gx = np.empty_like(x)
    for i in range(n):
        v = x[i]
        inner = _GELU_C * (v + _GELU_A * v * v * v)
        t = math.tanh(inner)
        dinner = _GELU_C * (1.0 + 3.0 * _GELU_A * v * v)
        gx[i] = gout[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dinner)
    return gx


@njit(cache=True)
def softplus_forward(x):
    n = x.shape[0]
    out = np.empty_like(x)
    for i in range(n):
        v = x[i]
        if v > 0.0:
            out[i] = v + math.log1p(math.exp(-v))
        else:
            out[i] = math.log1p(math.exp(v))
    return out


@njit(cache=True)
def softplus_backward(x, gout):
    n = x.shape[0]
    gx = np.empty_like(x)
    for i in range(n):
        gx[i] = gout[i] / (1.0 + math.exp(-x[i]))
    return gx


@njit(cache=True)
def adam_update(param, grad, m, v, step, lr, beta1, beta2, eps):
    n = param.shape[0]
    c1 = 1.0 - beta1**step
    c2 = 1.0 - beta2**step
    for i in range(n):
        g = grad[i]
        m[i] = beta1 * m[i] + (1.0 - beta1) * g
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g
        param[i] -= lr * (m[i] / c1) / (math.sqrt(v[i] / c2) + eps)


@njit(cache=True)
def scatter_add_rows(out, idx, rows):
    n, w = rows.shape
    for i in range(n):
        r = idx[i]
        for j in range(w):
            out[r, j] += rows[i, j]


def warmup(dtype=np.float32):
    """Trigger JIT compilation of every kernel for one dtype."""
    x2 = np.random.default_rng(0).standard_normal((4, 8)).astype(dtype)
    g2 = np.ones_like(x2)
    x1 = x2.ravel().copy()
    g1 = g2.ravel().copy()
    w = np.ones(8, dtype=dtype)
    p, _ = softmax_forward(x2)
    softmax_backward(p, g2)
    lp, _ = log_softmax_forward(x2)
    log_softmax_backward(lp, g2)
    out, mean, rstd = layernorm_forward(x2, w, w, 1e-5)
    layernorm_backward(g2, x2, w, mean, rstd)
    gelu_backward(x1, gelu_forward(x1))
    softplus_backward(x1, softplus_forward(x1))
    adam_update(x1, g1, np.zeros_like(x1), np.zeros_like(x1), 1, 1e-3, 0.9, 0.999, 1e-8)
    scatter_add_rows(x2, np.zeros(4, dtype=np.int64), g2)
