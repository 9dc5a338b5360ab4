"""Reverse-mode autodiff engine: Array/Tape, ops, Adam, checkpoints."""

from .adam import AdamState, adam_step, clip_global_norm
from .alloc import AllocationCounter
from .array import (
    DEFAULT_DTYPE,
    MASK_FILL,
    Array,
    Tape,
    active_tape,
    add,
    concat,
    div,
    dropout,
    embedding,
    exp,
    gather_last,
    gather_rows,
    gelu,
    layer_norm,
    log,
    log_softmax,
    matmul,
    mul,
    neg,
    parameter,
    pow_scalar,
    reduce_mean,
    reduce_sum,
    reshape,
    softmax,
    softplus,
    stop_gradient,
    sub,
    transpose,
)
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "DEFAULT_DTYPE",
    "MASK_FILL",
    "AdamState",
    "AllocationCounter",
    "Array",
    "Tape",
    "active_tape",
    "adam_step",
    "add",
    "clip_global_norm",
    "concat",
    "div",
    "dropout",
    "embedding",
    "exp",
    "gather_last",
    "gather_rows",
    "gelu",
    "layer_norm",
    "load_checkpoint",
    "log",
    "log_softmax",
    "matmul",
    "mul",
    "neg",
    "parameter",
    "pow_scalar",
    "reduce_mean",
    "reduce_sum",
    "reshape",
    "save_checkpoint",
    "softmax",
    "softplus",
    "stop_gradient",
    "sub",
    "transpose",
]
