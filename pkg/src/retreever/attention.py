"""Scaled dot-product attention, multi-head blocks, and encoder stacks.

Shapes carry arbitrary leading batch dimensions. Boolean masks mark the key
positions a query is allowed to attend to (True = allowed); every query must
keep at least one key or a MaskError is raised. Leading batch dimensions of
queries and context may broadcast against each other.
"""

from __future__ import annotations

import numpy as np

from . import engine
from .engine import Array
from .errors import EmptyContextError, ShapeError
from .nn import FeedForward, LayerNorm, Linear, Module


def scaled_dot_attention(
    q: Array, k: Array, v: Array, mask: np.ndarray | None = None
) -> Array:
    """softmax(q k^T / sqrt(d)) v over the last two axes.

    q: (..., M, d); k, v: (..., N, d); mask: bool, broadcastable against the
    (..., M, N) score matrix; a mask shaped exactly like k minus its feature
    axis gets a query axis inserted. Masked keys receive weight exactly 0.
    """
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"q/k width mismatch: {q.shape} vs {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"k/v length mismatch: {k.shape} vs {v.shape}")
    d = q.shape[-1]
    scores = engine.matmul(q, _swap_last(k)) * (1.0 / float(np.sqrt(d)))
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape == k.shape[:-1]:
            mask = mask[..., None, :]
    weights = engine.softmax(scores, mask=mask)
    return engine.matmul(weights, v)


def _swap_last(a: Array) -> Array:
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return engine.transpose(a, tuple(axes))


def _split_heads(x: Array, heads: int) -> Array:
    *lead, t, d = x.shape
    x = engine.reshape(x, (*lead, t, heads, d // heads))
    axes = list(range(x.ndim))
    axes[-3], axes[-2] = axes[-2], axes[-3]
    return engine.transpose(x, tuple(axes))


def _merge_heads(x: Array) -> Array:
    axes = list(range(x.ndim))
    axes[-3], axes[-2] = axes[-2], axes[-3]
    x = engine.transpose(x, tuple(axes))
    *lead, t, heads, hd = x.shape
    return engine.reshape(x, (*lead, t, heads * hd))


class AttentionBlock(Module):
    """Pre-norm multi-head attention plus feed-forward, with residuals.

    ``cross=False`` builds a self-attention block (keys = queries, one
    layer norm); ``cross=True`` adds a separate context norm and expects
    ``x_kv`` at call time.
    """

    def __init__(
        self,
        d: int,
        heads: int,
        rng: np.random.Generator,
        cross: bool = False,
        ffn_ratio: int = 4,
        dropout: float = 0.0,
        dtype=None,
    ):
        if d % heads != 0:
            raise ShapeError(f"width {d} not divisible by {heads} heads")
        self.d = d
        self.heads = heads
        self.cross = cross
        self.dropout_rate = dropout
        self.ln_q = LayerNorm(d, dtype=dtype)
        if cross:
            self.ln_kv = LayerNorm(d, dtype=dtype)
        self.wq = Linear(d, d, rng, dtype=dtype)
        self.wk = Linear(d, d, rng, dtype=dtype)
        self.wv = Linear(d, d, rng, dtype=dtype)
        self.wo = Linear(d, d, rng, dtype=dtype)
        self.ln_f = LayerNorm(d, dtype=dtype)
        self.ffn = FeedForward(d, rng, ratio=ffn_ratio, dtype=dtype)

    def attend(
        self,
        x_q: Array,
        x_kv: Array | None = None,
        key_mask: np.ndarray | None = None,
        rng: np.random.Generator | None = None,
        train: bool = False,
    ) -> Array:
        """Output has the query-input shape (broadcast with context batch)."""
        nq = self.ln_q(x_q)
        if x_kv is None:
            if self.cross:
                raise ShapeError("cross-attention block called without x_kv")
            nkv = nq
        else:
            nkv = self.ln_kv(x_kv) if self.cross else self.ln_q(x_kv)
        q = _split_heads(self.wq(nq), self.heads)
        k = _split_heads(self.wk(nkv), self.heads)
        v = _split_heads(self.wv(nkv), self.heads)
        mask = None
        if key_mask is not None:
            # (..., N) -> (..., 1, 1, N): broadcast over heads and queries
            mask = key_mask[..., None, None, :]
        att = scaled_dot_attention(q, k, v, mask=mask)
        proj = self.wo(_merge_heads(att))
        if train and self.dropout_rate > 0.0:
            proj = engine.dropout(proj, self.dropout_rate, rng, train)
        y = x_q + proj
        f = self.ffn(self.ln_f(y))
        if train and self.dropout_rate > 0.0:
            f = engine.dropout(f, self.dropout_rate, rng, train)
        return y + f


class EncoderStack(Module):
    """``depth`` self-attention blocks applied in order; depth 0 = identity."""

    def __init__(
        self,
        d: int,
        heads: int,
        depth: int,
        rng: np.random.Generator,
        ffn_ratio: int = 4,
        dropout: float = 0.0,
        dtype=None,
    ):
        self.blocks = [
            AttentionBlock(
                d, heads, rng, cross=False, ffn_ratio=ffn_ratio,
                dropout=dropout, dtype=dtype,
            )
            for _ in range(depth)
        ]

    @property
    def depth(self) -> int:
        return len(self.blocks)

    def __call__(
        self,
        x: Array,
        key_mask: np.ndarray | None = None,
        rng: np.random.Generator | None = None,
        train: bool = False,
    ) -> Array:
        if x.shape[-2] == 0:
            raise EmptyContextError("encoder received zero tokens")
        for block in self.blocks:
            x = block.attend(x, key_mask=key_mask, rng=rng, train=train)
        return x
