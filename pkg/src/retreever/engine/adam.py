"""Adam optimizer with bias correction, plus global-norm gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import kernels
from ..errors import PoisonedUpdateError, ShapeError
from .array import Array


@dataclass
class AdamState:
    """Per-parameter moment buffers and the shared step counter."""

    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def init(
        cls,
        params: list[Array],
        lr: float = 5e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> "AdamState":
        state = cls(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
        return state


def clip_global_norm(grads: list[np.ndarray], max_norm: float) -> float:
    """Return the global norm; scale grads down (reallocating) if it exceeds
    ``max_norm``. Grads may be read-only views, so clipping never mutates."""
    total = 0.0
    for g in grads:
        total += float(np.dot(g.reshape(-1), g.reshape(-1)))
    norm = float(np.sqrt(total))
    if max_norm > 0.0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for i, g in enumerate(grads):
            grads[i] = g * scale
    return norm


def adam_step(params: list[Array], grads: list[np.ndarray], state: AdamState) -> None:
    """In-place bias-corrected Adam update of every parameter."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError(
            f"adam_step length mismatch: {len(params)} params, {len(grads)} grads, "
            f"{len(state.m)} moment buffers"
        )
    state.step += 1
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.data.shape:
            raise ShapeError(
                f"gradient shape {g.shape} != parameter shape {p.data.shape} "
                f"for {p.name!r}"
            )
        if not np.all(np.isfinite(g)):
            raise PoisonedUpdateError(f"non-finite gradient for parameter {p.name!r}")
        flat = np.ascontiguousarray(g, dtype=p.data.dtype).reshape(-1)
        kernels.adam_update(
            p.data.reshape(-1),
            flat,
            m.reshape(-1),
            v.reshape(-1),
            state.step,
            state.lr,
            state.beta1,
            state.beta2,
            state.eps,
        )
