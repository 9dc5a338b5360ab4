"""Parameter containers and basic layers on top of the autodiff engine."""

from __future__ import annotations

import numpy as np

from . import engine
from .engine import Array
from .errors import ShapeError


class Module:
    """Base class providing recursive parameter discovery and state I/O.

    Parameters are Arrays with ``requires_grad=True`` reachable through
    attributes, lists, or tuples of sub-modules. Traversal order is the
    attribute insertion order, so it is stable across runs of one build.
    """

    def named_params(self, prefix: str = "") -> list[tuple[str, Array]]:
        found: list[tuple[str, Array]] = []
        for attr, value in vars(self).items():
            if attr.startswith("_"):
                continue  # underscored attrs hold shared (not owned) weights
            path = f"{prefix}{attr}"
            found.extend(_collect(path, value))
        return found

    def params(self) -> list[Array]:
        return [p for _, p in self.named_params()]

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_params()}

    def load_state(self, tensors: dict[str, np.ndarray]) -> None:
        for name, p in self.named_params():
            if name not in tensors:
                raise ShapeError(f"checkpoint is missing parameter {name!r}")
            incoming = tensors[name]
            if tuple(incoming.shape) != p.data.shape:
                raise ShapeError(
                    f"parameter {name!r} has shape {p.data.shape}, "
                    f"checkpoint has {tuple(incoming.shape)}"
                )
            p.data[...] = incoming.astype(p.data.dtype)


def _collect(path: str, value) -> list[tuple[str, Array]]:
    if isinstance(value, Array):
        if value.requires_grad:
            value.name = path
            return [(path, value)]
        return []
    if isinstance(value, Module):
        return value.named_params(prefix=path + ".")
    if isinstance(value, (list, tuple)):
        found = []
        for i, item in enumerate(value):
            found.extend(_collect(f"{path}.{i}", item))
        return found
    return []


class Linear(Module):
    """Affine map over the last axis: x @ W + b, W of shape (d_in, d_out)."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype=None):
        limit = float(np.sqrt(6.0 / (d_in + d_out)))
        w = rng.uniform(-limit, limit, size=(d_in, d_out))
        self.w = engine.parameter(w, name="", dtype=dtype or engine.DEFAULT_DTYPE)
        self.b = engine.parameter(
            np.zeros(d_out), name="", dtype=dtype or engine.DEFAULT_DTYPE
        )

    def __call__(self, x: Array) -> Array:
        return engine.matmul(x, self.w) + self.b


class LayerNorm(Module):
    def __init__(self, d: int, dtype=None, eps: float = 1e-5):
        self.gain = engine.parameter(
            np.ones(d), name="", dtype=dtype or engine.DEFAULT_DTYPE
        )
        self.bias = engine.parameter(
            np.zeros(d), name="", dtype=dtype or engine.DEFAULT_DTYPE
        )
        self.eps = eps

    def __call__(self, x: Array) -> Array:
        return engine.layer_norm(x, self.gain, self.bias, eps=self.eps)


class FeedForward(Module):
    """Linear -> GELU -> Linear with a configurable expansion ratio."""

    def __init__(
        self, d: int, rng: np.random.Generator, ratio: int = 4, dtype=None
    ):
        self.lin1 = Linear(d, ratio * d, rng, dtype=dtype)
        self.lin2 = Linear(ratio * d, d, rng, dtype=dtype)

    def __call__(self, x: Array) -> Array:
        return self.lin2(engine.gelu(self.lin1(x)))


class Embedding(Module):
    """Learned lookup table of shape (count, d)."""

    def __init__(self, count: int, d: int, rng: np.random.Generator, dtype=None):
        table = rng.normal(0.0, 0.02, size=(count, d))
        self.table = engine.parameter(
            table, name="", dtype=dtype or engine.DEFAULT_DTYPE
        )

    def __call__(self, idx: np.ndarray) -> Array:
        return engine.embedding(self.table, idx)


class MLP(Module):
    """Two-layer GELU perceptron without residual, for query embedding."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype=None):
        self.lin1 = Linear(d_in, d_out, rng, dtype=dtype)
        self.lin2 = Linear(d_out, d_out, rng, dtype=dtype)

    def __call__(self, x: Array) -> Array:
        return self.lin2(engine.gelu(self.lin1(x)))
