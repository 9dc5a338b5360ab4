"""Shared test fixtures: finite-difference gradient checking in float64."""

from __future__ import annotations

import numpy as np
import pytest

from retreever.engine import Array, Tape, parameter

FD_H = 1e-5
FD_RTOL = 1e-4


def leaf(rng: np.random.Generator, shape, scale: float = 1.0) -> Array:
    """A float64 trainable leaf with standard-normal entries."""
    return parameter(rng.standard_normal(shape) * scale, name="leaf", dtype=np.float64)


def tape_grads(fn, params: list[Array]) -> list[np.ndarray]:
    with Tape() as tape:
        loss = fn()
    tape.backward(loss)
    return [tape.grad(p) for p in params]


def fd_grads(fn, params: list[Array], h: float = FD_H) -> list[np.ndarray]:
    """Central finite differences of the scalar fn around the current values."""
    outs = []
    for p in params:
        flat = p.data.reshape(-1)
        g = np.empty(flat.size, dtype=np.float64)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = fn().item()
            flat[i] = orig - h
            f_minus = fn().item()
            flat[i] = orig
            g[i] = (f_plus - f_minus) / (2.0 * h)
        outs.append(g.reshape(p.data.shape))
    return outs


def assert_grads_close(fn, params: list[Array], rtol: float = FD_RTOL) -> None:
    """Tape gradients match central differences at relative error < rtol.

    Relative error per tensor: max|got - want| / max(max|want|, 1e-8).
    """
    got = tape_grads(fn, params)
    want = fd_grads(fn, params)
    for g, w, p in zip(got, want, params):
        assert g.shape == p.data.shape
        scale = max(float(np.abs(w).max()), 1e-8)
        rel = float(np.abs(g - w).max()) / scale
        assert rel < rtol, f"gradient mismatch: rel err {rel:.3e} on shape {p.data.shape}"


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)
