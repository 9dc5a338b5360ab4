"""Pure-numpy reference implementations of the hot kernels.

Every function here has a numba twin in ``numba_backend`` with the same
signature and semantics. This module is the fallback (and the ground truth
the numba kernels are tested against).

Shape conventions: row kernels take contiguous 2-D arrays (rows, width);
elementwise kernels take contiguous 1-D views. Callers are responsible for
reshaping.
"""

from __future__ import annotations

import numpy as np

# tanh-form GELU constant sqrt(2/pi)
_GELU_C = 0.7978845608028654
_GELU_A = 0.044715


def softmax_forward(x):
    """Row softmax with max subtraction. Returns (probs, rowmax)."""
    rowmax = np.max(x, axis=1)
    e = np.exp(x - rowmax[:, None])
    p = e / np.sum(e, axis=1, keepdims=True)
    return p, rowmax


def softmax_backward(p, gout):
    dot = np.sum(p * gout, axis=1, keepdims=True)
    return p * (gout - dot)


def log_softmax_forward(x):
    """Row log-softmax. Returns (logp, rowmax)."""
    rowmax = np.max(x, axis=1)
    shifted = x - rowmax[:, None]
    lse = np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
    return shifted - lse, rowmax


def log_softmax_backward(logp, gout):
    return gout - np.exp(logp) * np.sum(gout, axis=1, keepdims=True)


def layernorm_forward(x, gain, bias, eps):
    """Normalize rows to zero mean / unit variance, then scale and shift.

    Returns (out, mean, rstd); mean and rstd are kept for backward.
    """
    mean = np.mean(x, axis=1)
    var = np.mean((x - mean[:, None]) ** 2, axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[:, None]) * rstd[:, None]
    return xhat * gain + bias, mean, rstd


def layernorm_backward(gout, x, gain, mean, rstd):
    xhat = (x - mean[:, None]) * rstd[:, None]
    gxhat = gout * gain
    m1 = np.mean(gxhat, axis=1, keepdims=True)
    m2 = np.mean(gxhat * xhat, axis=1, keepdims=True)
    gx = rstd[:, None] * (gxhat - m1 - xhat * m2)
    ggain = np.sum(gout * xhat, axis=0)
    gbias = np.sum(gout, axis=0)
    return gx, ggain, gbias


def gelu_forward(x):
    """tanh-form GELU: 0.5*x*(1 + tanh(c*(x + a*x^3)))."""
    inner = _GELU_C * (x + _GELU_A * x * x * x)
    return 0.5 * x * (1.0 + np.tanh(inner))


def gelu_backward(x, gout):
    inner = _GELU_C * (x + _GELU_A * x * x * x)
    t = np.tanh(inner)
    dinner = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
    grad = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
    return gout * grad


def softplus_forward(x):
    """Numerically stable softplus: max(x, 0) + log1p(exp(-|x|))."""
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def softplus_backward(x, gout):
    return gout / (1.0 + np.exp(-x))


def adam_update(param, grad, m, v, step, lr, beta1, beta2, eps):
    """Fused in-place Adam update with bias correction (1-D views)."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1**step)
    vhat = v / (1.0 - beta2**step)
    param -= lr * mhat / (np.sqrt(vhat) + eps)


def scatter_add_rows(out, idx, rows):
    """out[idx[i], :] += rows[i, :] with repeated indices accumulating."""
    np.add.at(out, idx, rows)
