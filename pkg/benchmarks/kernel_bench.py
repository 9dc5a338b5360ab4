"""Kernel backend comparison: numba against the numpy reference.

Runs every hot kernel on training-shaped inputs and prints per-call times.
Usage: python benchmarks/kernel_bench.py [--repeats 30]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from retreever.kernels import numpy_backend

try:
    from retreever.kernels import numba_backend
except ImportError:
    numba_backend = None


def best_ms(fn, args, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best * 1000.0


def make_cases(rng: np.random.Generator) -> list[tuple[str, str, tuple]]:
    """(kernel name, arg spec) pairs on attention-sized inputs."""
    rows = rng.standard_normal((4096, 256)).astype(np.float32)
    p, _ = numpy_backend.softmax_forward(rows)
    logp, _ = numpy_backend.log_softmax_forward(rows)
    gout = rng.standard_normal(rows.shape).astype(np.float32)
    ln_x = rng.standard_normal((8192, 64)).astype(np.float32)
    gain = rng.standard_normal(64).astype(np.float32)
    bias = rng.standard_normal(64).astype(np.float32)
    _, mean, rstd = numpy_backend.layernorm_forward(ln_x, gain, bias, 1e-5)
    ln_g = rng.standard_normal(ln_x.shape).astype(np.float32)
    flat = rng.standard_normal(1 << 20).astype(np.float32)
    flat_g = rng.standard_normal(1 << 20).astype(np.float32)
    param = rng.standard_normal(1 << 20).astype(np.float32)
    grad = rng.standard_normal(1 << 20).astype(np.float32)
    m = np.zeros(1 << 20, dtype=np.float32)
    v = np.zeros(1 << 20, dtype=np.float32)
    out = np.zeros((4096, 64), dtype=np.float32)
    idx = rng.integers(0, 4096, size=65536)
    scat = rng.standard_normal((65536, 64)).astype(np.float32)
    return [
        ("softmax_forward", (rows,)),
        ("softmax_backward", (p, gout)),
        ("log_softmax_forward", (rows,)),
        ("log_softmax_backward", (logp, gout)),
        ("layernorm_forward", (ln_x, gain, bias, 1e-5)),
        ("layernorm_backward", (ln_g, ln_x, gain, mean, rstd)),
        ("gelu_forward", (flat,)),
        ("gelu_backward", (flat, flat_g)),
        ("softplus_forward", (flat,)),
        ("softplus_backward", (flat, flat_g)),
        ("adam_update", (param, grad, m, v, 10, 5e-4, 0.9, 0.999, 1e-8)),
        ("scatter_add_rows", (out, idx, scat)),
    ]


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=30)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    cases = make_cases(rng)

    if numba_backend is not None:
        numba_backend.warmup()

    header = f"{'kernel':<22} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for name, call_args in cases:
        np_ms = best_ms(getattr(numpy_backend, name), call_args, args.repeats)
        if numba_backend is None:
            print(f"{name:<22} {np_ms:>10.3f} {'n/a':>10} {'n/a':>8}")
            continue
        nb_ms = best_ms(getattr(numba_backend, name), call_args, args.repeats)
        print(f"{name:<22} {np_ms:>10.3f} {nb_ms:>10.3f} {np_ms / nb_ms:>8.2f}x")


if __name__ == "__main__":
    main()
