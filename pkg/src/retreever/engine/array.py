"""Minimal reverse-mode autodiff over numpy arrays.

An :class:`Array` wraps an ``np.ndarray`` (float32 for training, float64 for
oracle-grade gradient checks). Operations executed while a :class:`Tape` is
active append backward closures to the tape in execution order; replaying the
record in reverse visits operations in reverse topological order and
accumulates total derivatives for every reachable input.

Conventions:
  - Arrays are immutable after creation; backward never mutates stored
    gradients in place (accumulation reallocates), so views may be shared.
  - Masks are boolean, True = position allowed; masking is an additive
    ``-1e9`` sentinel applied before softmax / log-softmax.
  - Integer index arrays are plain ``np.ndarray`` (no gradients).
"""

from __future__ import annotations

import itertools
import weakref
from typing import Callable, Iterable, Sequence

import numpy as np

from .. import kernels
from ..errors import MaskError, RankError, ShapeError, StateError

DEFAULT_DTYPE = np.float32
MASK_FILL = 1e9  # magnitude of the additive pre-softmax sentinel

_uid_counter = itertools.count()
_TAPE_STACK: list["Tape"] = []
_ALLOC_COUNTERS: list = []  # active AllocationCounter instances


class Array:
    """A dense float tensor participating in reverse-mode autodiff."""

    __slots__ = ("data", "requires_grad", "uid", "name", "__weakref__")

    def __init__(
        self,
        data,
        dtype=None,
        requires_grad: bool = False,
        name: str | None = None,
    ):
        arr = np.asarray(data)
        if dtype is not None and arr.dtype != dtype:
            arr = arr.astype(dtype)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.uid = next(_uid_counter)
        self.name = name
        if _ALLOC_COUNTERS and arr.base is None:
            nbytes = arr.nbytes
            for counter in list(_ALLOC_COUNTERS):
                counter._on_alloc(nbytes)
                weakref.finalize(self, counter._on_free, nbytes)

    # -- introspection -----------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Array(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return pow_scalar(self, exponent)

    def reshape(self, *shape) -> "Array":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Array":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims: bool = False) -> "Array":
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Array":
        return reduce_mean(self, axis=axis, keepdims=keepdims)


def parameter(data, name: str, dtype=None) -> Array:
    """A trainable leaf Array."""
    return Array(data, dtype=dtype, requires_grad=True, name=name)


class Tape:
    """Ordered record of operations for one backward pass.

    Use as a context manager around the forward computation, then call
    :meth:`backward` once with a scalar loss. Gradients of leaves are then
    available through :meth:`grad`; a value that never participated in the
    loss yields exact zeros.
    """

    def __init__(self):
        self._ops: list[tuple[int, str, Callable[[np.ndarray], None]]] = []
        self._grads: dict[int, np.ndarray] = {}
        self._consumed = False

    def __enter__(self) -> "Tape":
        if self._consumed:
            raise StateError("tape already consumed by backward()")
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self

    def _accum(self, uid: int, g: np.ndarray) -> None:
        existing = self._grads.get(uid)
        # reallocate on fan-in so shared buffers are never written in place
        self._grads[uid] = g if existing is None else existing + g

    def op_names(self) -> list[str]:
        return [name for _, name, _ in self._ops]

    def backward(self, loss: Array) -> None:
        if self._consumed:
            raise StateError("tape already consumed by backward()")
        if self in _TAPE_STACK:
            raise StateError("backward() called while tape is still active")
        if loss.data.ndim != 0:
            raise RankError(
                f"backward requires a scalar loss, got shape {loss.data.shape}"
            )
        self._consumed = True
        self._grads[loss.uid] = np.ones((), dtype=loss.data.dtype)
        for out_uid, _, fn in reversed(self._ops):
            g = self._grads.pop(out_uid, None)
            if g is not None:
                fn(g)
        self._ops.clear()

    def grad(self, arr: Array) -> np.ndarray:
        """Total derivative of the loss w.r.t. ``arr`` (zeros if unreached)."""
        if not self._consumed:
            raise StateError("grad() requires backward() to have run")
        g = self._grads.get(arr.uid)
        if g is None:
            return np.zeros_like(arr.data)
        if g.shape != arr.data.shape:
            g = np.broadcast_to(g, arr.data.shape)
        return g


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _record(
    inputs: Sequence[Array], out: Array, name: str, backward: Callable
) -> Array:
    tape = active_tape()
    if tape is not None and any(a.requires_grad for a in inputs):
        out.requires_grad = True
        tape._ops.append((out.uid, name, backward))
    return out


def _as_array(x, like: Array) -> Array:
    if isinstance(x, Array):
        return x
    return Array(np.asarray(x, dtype=like.data.dtype))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- arithmetic -------------------------------------------------------------


def add(a, b) -> Array:
    a = _as_array(a, b) if not isinstance(a, Array) else a
    b = _as_array(b, a)
    out = Array(a.data + b.data)
    tape = active_tape()

    def backward(g):
        if a.requires_grad:
            tape._accum(a.uid, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            tape._accum(b.uid, _unbroadcast(g, b.data.shape))

    return _record((a, b), out, "add", backward)


def sub(a, b) -> Array:
    a = _as_array(a, b) if not isinstance(a, Array) else a
    b = _as_array(b, a)
    out = Array(a.data - b.data)
    tape = active_tape()

    def backward(g):
        if a.requires_grad:
            tape._accum(a.uid, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            tape._accum(b.uid, _unbroadcast(-g, b.data.shape))

    return _record((a, b), out, "sub", backward)


def mul(a, b) -> Array:
    a = _as_array(a, b) if not isinstance(a, Array) else a
    b = _as_array(b, a)
    out = Array(a.data * b.data)
    tape = active_tape()
    a_data, b_data = a.data, b.data

    def backward(g):
        if a.requires_grad:
            tape._accum(a.uid, _unbroadcast(g * b_data, a_data.shape))
        if b.requires_grad:
            tape._accum(b.uid, _unbroadcast(g * a_data, b_data.shape))

    return _record((a, b), out, "mul", backward)


def div(a, b) -> Array:
    a = _as_array(a, b) if not isinstance(a, Array) else a
    b = _as_array(b, a)
    out = Array(a.data / b.data)
    tape = active_tape()
    a_data, b_data = a.data, b.data

    def backward(g):
        if a.requires_grad:
            tape._accum(a.uid, _unbroadcast(g / b_data, a_data.shape))
        if b.requires_grad:
            tape._accum(
                b.uid, _unbroadcast(-g * a_data / (b_data * b_data), b_data.shape)
            )

    return _record((a, b), out, "div", backward)


def neg(a: Array) -> Array:
    out = Array(-a.data)
    tape = active_tape()

    def backward(g):
        tape._accum(a.uid, -g)

    return _record((a,), out, "neg", backward)


def pow_scalar(a: Array, exponent: float) -> Array:
    exponent = float(exponent)
    out = Array(a.data**exponent)
    tape = active_tape()
    a_data = a.data

    def backward(g):
        tape._accum(a.uid, g * exponent * a_data ** (exponent - 1.0))

    return _record((a,), out, "pow", backward)


def exp(a: Array) -> Array:
    out = Array(np.exp(a.data))
    tape = active_tape()
    out_data = out.data

    def backward(g):
        tape._accum(a.uid, g * out_data)

    return _record((a,), out, "exp", backward)


def log(a: Array) -> Array:
    out = Array(np.log(a.data))
    tape = active_tape()
    a_data = a.data

    def backward(g):
        tape._accum(a.uid, g / a_data)

    return _record((a,), out, "log", backward)


def matmul(a: Array, b: Array) -> Array:
    if a.ndim < 2 or b.ndim < 2:
        raise RankError(
            f"matmul requires ndim >= 2 operands, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(
            f"matmul inner extents differ: {a.data.shape} @ {b.data.shape}"
        )
    out = Array(np.matmul(a.data, b.data))
    tape = active_tape()
    a_data, b_data = a.data, b.data

    def backward(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b_data, -1, -2))
            tape._accum(a.uid, _unbroadcast(ga, a_data.shape))
        if b.requires_grad:
            if b_data.ndim == 2 and a_data.ndim > 2:
                # one flat gemm instead of batched tiny gemms + reduction
                k, n = a_data.shape[-1], g.shape[-1]
                gb = np.matmul(a_data.reshape(-1, k).T, g.reshape(-1, n))
                tape._accum(b.uid, gb)
            else:
                gb = np.matmul(np.swapaxes(a_data, -1, -2), g)
                tape._accum(b.uid, _unbroadcast(gb, b_data.shape))

    return _record((a, b), out, "matmul", backward)


# -- reductions and shape ops ------------------------------------------------


def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def reduce_sum(a: Array, axis=None, keepdims: bool = False) -> Array:
    axes = _norm_axes(axis, a.ndim)
    out = Array(a.data.sum(axis=axes, keepdims=keepdims))
    tape = active_tape()
    in_shape = a.data.shape

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        tape._accum(a.uid, np.broadcast_to(g, in_shape))

    return _record((a,), out, "sum", backward)


def reduce_mean(a: Array, axis=None, keepdims: bool = False) -> Array:
    axes = _norm_axes(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.data.shape[ax]
    out = Array(a.data.mean(axis=axes, keepdims=keepdims))
    tape = active_tape()
    in_shape = a.data.shape
    scale = 1.0 / count

    def backward(g):
        g = g * scale
        if not keepdims:
            g = np.expand_dims(g, axes)
        tape._accum(a.uid, np.broadcast_to(g, in_shape))

    return _record((a,), out, "mean", backward)


def reshape(a: Array, shape: tuple[int, ...]) -> Array:
    out = Array(a.data.reshape(shape))
    tape = active_tape()
    in_shape = a.data.shape

    def backward(g):
        tape._accum(a.uid, g.reshape(in_shape))

    return _record((a,), out, "reshape", backward)


def transpose(a: Array, axes: tuple[int, ...] = ()) -> Array:
    if not axes:
        axes = tuple(reversed(range(a.ndim)))
    out = Array(a.data.transpose(axes))
    tape = active_tape()
    inverse = tuple(np.argsort(axes))

    def backward(g):
        tape._accum(a.uid, g.transpose(inverse))

    return _record((a,), out, "transpose", backward)


def concat(arrays: Iterable[Array], axis: int = 0) -> Array:
    arrays = list(arrays)
    out = Array(np.concatenate([a.data for a in arrays], axis=axis))
    tape = active_tape()
    sizes = [a.data.shape[axis] for a in arrays]
    offsets = np.cumsum(sizes)[:-1]

    def backward(g):
        pieces = np.split(g, offsets, axis=axis)
        for arr, piece in zip(arrays, pieces):
            if arr.requires_grad:
                tape._accum(arr.uid, piece)

    return _record(tuple(arrays), out, "concat", backward)


def stop_gradient(a: Array) -> Array:
    """Detach: same values, no gradient path."""
    return Array(a.data)


# -- gathers ------------------------------------------------------------------


def gather_rows(a: Array, idx: np.ndarray) -> Array:
    """Select rows along axis 1: a[B, N, D], idx[B, S] -> [B, S, D]."""
    if a.ndim != 3 or idx.ndim != 2:
        raise RankError(
            f"gather_rows wants a 3-d source and 2-d index, got {a.data.shape} and {idx.shape}"
        )
    B, N, D = a.data.shape
    idx = idx.astype(np.int64, copy=False)
    out = Array(np.take_along_axis(a.data, idx[:, :, None], axis=1))
    tape = active_tape()

    def backward(g):
        ga = np.zeros((B, N, D), dtype=g.dtype)
        rows = np.ascontiguousarray(g.reshape(-1, D))
        flat = (idx + (np.arange(B, dtype=np.int64) * N)[:, None]).ravel()
        kernels.scatter_add_rows(ga.reshape(B * N, D), flat, rows)
        tape._accum(a.uid, ga)

    return _record((a,), out, "gather_rows", backward)


def gather_last(a: Array, idx: np.ndarray) -> Array:
    """take_along_axis over the last axis; indices must be unique per row."""
    if idx.ndim != a.ndim:
        raise RankError(
            f"gather_last index ndim {idx.ndim} != source ndim {a.ndim}"
        )
    idx = idx.astype(np.int64, copy=False)
    out = Array(np.take_along_axis(a.data, idx, axis=-1))
    tape = active_tape()
    in_shape = a.data.shape

    def backward(g):
        ga = np.zeros(in_shape, dtype=g.dtype)
        np.put_along_axis(ga, np.broadcast_to(idx, g.shape), g, axis=-1)
        tape._accum(a.uid, ga)

    return _record((a,), out, "gather_last", backward)


def embedding(weight: Array, idx: np.ndarray) -> Array:
    """Row lookup: weight[V, D], integer idx of any shape -> idx.shape + (D,)."""
    if weight.ndim != 2:
        raise RankError(f"embedding table must be 2-d, got {weight.data.shape}")
    idx = np.asarray(idx)
    out = Array(weight.data[idx])
    tape = active_tape()
    V, D = weight.data.shape

    def backward(g):
        gw = np.zeros((V, D), dtype=g.dtype)
        rows = np.ascontiguousarray(g.reshape(-1, D))
        kernels.scatter_add_rows(gw, idx.ravel().astype(np.int64), rows)
        tape._accum(weight.uid, gw)

    return _record((weight,), out, "embedding", backward)


# -- normalizers and activations ----------------------------------------------


def _masked_logits(x: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    if mask is None:
        return x
    m = np.broadcast_to(mask, x.shape)
    if not m.any(axis=-1).all():
        raise MaskError("softmax row with every position masked")
    return np.where(m, x, x - x.dtype.type(MASK_FILL))


def softmax(a: Array, mask: np.ndarray | None = None, axis: int = -1) -> Array:
    """Stable softmax along ``axis``; False mask entries get weight 0."""
    moved = axis not in (-1, a.ndim - 1)
    x = np.swapaxes(a.data, axis, -1) if moved else a.data
    m = np.swapaxes(mask, axis, -1) if (moved and mask is not None) else mask
    x = _masked_logits(x, m)
    n = x.shape[-1]
    p2, _ = kernels.softmax_forward(np.ascontiguousarray(x.reshape(-1, n)))
    p = p2.reshape(x.shape)
    out = Array(np.swapaxes(p, axis, -1) if moved else p)
    tape = active_tape()

    def backward(g):
        gm = np.swapaxes(g, axis, -1) if moved else g
        gx = kernels.softmax_backward(p2, np.ascontiguousarray(gm.reshape(-1, n)))
        gx = gx.reshape(x.shape)
        tape._accum(a.uid, np.swapaxes(gx, axis, -1) if moved else gx)

    return _record((a,), out, "softmax", backward)


def log_softmax(a: Array, mask: np.ndarray | None = None, axis: int = -1) -> Array:
    moved = axis not in (-1, a.ndim - 1)
    x = np.swapaxes(a.data, axis, -1) if moved else a.data
    m = np.swapaxes(mask, axis, -1) if (moved and mask is not None) else mask
    x = _masked_logits(x, m)
    n = x.shape[-1]
    lp2, _ = kernels.log_softmax_forward(np.ascontiguousarray(x.reshape(-1, n)))
    lp = lp2.reshape(x.shape)
    out = Array(np.swapaxes(lp, axis, -1) if moved else lp)
    tape = active_tape()

    def backward(g):
        gm = np.swapaxes(g, axis, -1) if moved else g
        gx = kernels.log_softmax_backward(
            lp2, np.ascontiguousarray(gm.reshape(-1, n))
        )
        gx = gx.reshape(x.shape)
        tape._accum(a.uid, np.swapaxes(gx, axis, -1) if moved else gx)

    return _record((a,), out, "log_softmax", backward)


def layer_norm(a: Array, gain: Array, bias: Array, eps: float = 1e-5) -> Array:
    """Normalize over the last axis, then scale and shift."""
    D = a.data.shape[-1]
    if gain.data.shape != (D,) or bias.data.shape != (D,):
        raise ShapeError(
            f"layer_norm gain/bias must be ({D},), got {gain.data.shape} and {bias.data.shape}"
        )
    x2 = np.ascontiguousarray(a.data.reshape(-1, D))
    out2, mean, rstd = kernels.layernorm_forward(x2, gain.data, bias.data, eps)
    out = Array(out2.reshape(a.data.shape))
    tape = active_tape()

    def backward(g):
        g2 = np.ascontiguousarray(g.reshape(-1, D))
        gx, ggain, gbias = kernels.layernorm_backward(g2, x2, gain.data, mean, rstd)
        if a.requires_grad:
            tape._accum(a.uid, gx.reshape(a.data.shape))
        if gain.requires_grad:
            tape._accum(gain.uid, ggain)
        if bias.requires_grad:
            tape._accum(bias.uid, gbias)

    return _record((a, gain, bias), out, "layer_norm", backward)


def gelu(a: Array) -> Array:
    flat = np.ascontiguousarray(a.data.reshape(-1))
    out = Array(kernels.gelu_forward(flat).reshape(a.data.shape))
    tape = active_tape()

    def backward(g):
        gx = kernels.gelu_backward(flat, np.ascontiguousarray(g.reshape(-1)))
        tape._accum(a.uid, gx.reshape(a.data.shape))

    return _record((a,), out, "gelu", backward)


def softplus(a: Array) -> Array:
    flat = np.ascontiguousarray(a.data.reshape(-1))
    out = Array(kernels.softplus_forward(flat).reshape(a.data.shape))
    tape = active_tape()

    def backward(g):
        gx = kernels.softplus_backward(flat, np.ascontiguousarray(g.reshape(-1)))
        tape._accum(a.uid, gx.reshape(a.data.shape))

    return _record((a,), out, "softplus", backward)


def dropout(a: Array, p: float, rng: np.random.Generator, train: bool) -> Array:
    """Inverted dropout; identity when not training or p == 0."""
    if not train or p == 0.0:
        return a
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    keep = (rng.random(a.data.shape) >= p).astype(a.data.dtype)
    keep /= np.asarray(1.0 - p, dtype=a.data.dtype)
    out = Array(a.data * keep)
    tape = active_tape()

    def backward(g):
        tape._accum(a.uid, g * keep)

    return _record((a,), out, "dropout", backward)
