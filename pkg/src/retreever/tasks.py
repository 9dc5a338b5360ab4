"""Synthetic tasks: palindrome copy and GP meta-regression.

Copy task: sequences are [BOS] ++ palindrome of 2^k - 2 digits ++ [EOS]
(vocabulary: digits 0-9, BOS=10, EOS=11; positions are 1-based). The model
sees the first half as context and must emit the second half, whose symbol
at position 2^k - i equals the context symbol at position i + 1.

GP task: function values are drawn jointly from a GP prior at uniform
inputs on [-2, 2]; training uses the RBF kernel, evaluation also uses
Matern 5/2.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .models import Prediction, gaussian_scale_np

BOS_ID = 10
EOS_ID = 11
VOCAB_SIZE = 12
GP_INTERVAL = (-2.0, 2.0)
GP_JITTER = 1e-6
FAMILIES = ("rbf", "matern52")


@dataclass
class CopyBatch:
    context_ids: np.ndarray  # (B, 2^{k-1}) symbol ids
    context_positions: np.ndarray  # (2^{k-1},) 1-based positions
    query_positions: np.ndarray  # (2^{k-1},) positions 2^{k-1}+1 .. 2^k
    targets: np.ndarray  # (B, 2^{k-1}) second-half symbols
    k: int

    @property
    def context(self):
        return (self.context_ids, self.context_positions)

    @property
    def positions(self):
        return None  # index ordering needs no coordinates


def gen_copy_batch(k: int, batch_size: int, rng: np.random.Generator) -> CopyBatch:
    """Fresh palindrome sequences; digits uniform over 0-9."""
    if k < 2:
        raise ConfigError(f"copy task needs k >= 2, got {k}")
    n = 2**k
    half = n // 2
    digits = rng.integers(0, 10, size=(batch_size, half - 1), dtype=np.int64)
    bos = np.full((batch_size, 1), BOS_ID, dtype=np.int64)
    eos = np.full((batch_size, 1), EOS_ID, dtype=np.int64)
    seq = np.concatenate([bos, digits, digits[:, ::-1], eos], axis=1)
    return CopyBatch(
        context_ids=seq[:, :half],
        context_positions=np.arange(1, half + 1, dtype=np.int64),
        query_positions=np.arange(half + 1, n + 1, dtype=np.int64),
        targets=seq[:, half:],
        k=k,
    )


@dataclass
class GPBatch:
    x_context: np.ndarray  # (B, N, 1)
    y_context: np.ndarray  # (B, N, 1)
    x_target: np.ndarray  # (B, M, 1)
    y_target: np.ndarray  # (B, M, 1)
    lengthscale: np.ndarray  # (B,)
    sigma_f: np.ndarray  # (B,)
    family: str

    @property
    def context(self):
        return np.concatenate([self.x_context, self.y_context], axis=-1)

    @property
    def positions(self):
        return self.x_context


def rbf_kernel(
    x1: np.ndarray, x2: np.ndarray, lengthscale: np.ndarray, sigma_f: np.ndarray
) -> np.ndarray:
    """sigma_f^2 exp(-(x - x')^2 / (2 l^2)); batched over the lead axis."""
    sq = (x1[:, :, None, 0] - x2[:, None, :, 0]) ** 2
    ls = lengthscale[:, None, None]
    return (sigma_f**2)[:, None, None] * np.exp(-sq / (2.0 * ls**2))


def matern52_kernel(
    x1: np.ndarray, x2: np.ndarray, lengthscale: np.ndarray, sigma_f: np.ndarray
) -> np.ndarray:
    """sigma_f^2 (1 + sqrt5 r/l + 5 r^2/(3 l^2)) exp(-sqrt5 r/l)."""
    r = np.abs(x1[:, :, None, 0] - x2[:, None, :, 0])
    ls = lengthscale[:, None, None]
    a = np.sqrt(5.0) * r / ls
    return (sigma_f**2)[:, None, None] * (1.0 + a + a**2 / 3.0) * np.exp(-a)


_KERNELS = {"rbf": rbf_kernel, "matern52": matern52_kernel}


def gen_gp_batch(
    family: str,
    batch_size: int,
    rng: np.random.Generator,
    n_context: int | None = None,
    n_target: int | None = None,
) -> GPBatch:
    """Joint Cholesky sample at context plus target inputs.

    N ~ U[3, 47), M ~ U[3, 50 - N) unless pinned; the jitter grows tenfold
    per factorization retry, with an error after three failed attempts.
    """
    if family not in FAMILIES:
        raise ConfigError(f"kernel family must be one of {FAMILIES}, got {family!r}")
    n = n_context if n_context is not None else int(rng.integers(3, 47))
    m = n_target if n_target is not None else int(rng.integers(3, 50 - n))
    total = n + m
    lo, hi = GP_INTERVAL
    x = rng.uniform(lo, hi, size=(batch_size, total, 1))
    lengthscale = rng.uniform(0.6, 1.0, size=batch_size)
    sigma_f = rng.uniform(0.1, 1.0, size=batch_size)
    cov = _KERNELS[family](x, x, lengthscale, sigma_f)
    eye = np.eye(total)[None]
    jitter = GP_JITTER
    chol = None
    for attempt in range(3):
        try:
            chol = np.linalg.cholesky(cov + jitter * eye)
            break
        except np.linalg.LinAlgError:
            jitter *= 10.0
    if chol is None:
        raise np.linalg.LinAlgError(
            f"covariance not positive definite after 3 jitter attempts (last {jitter:g})"
        )
    z = rng.standard_normal((batch_size, total, 1))
    y = chol @ z
    return GPBatch(
        x_context=x[:, :n],
        y_context=y[:, :n],
        x_target=x[:, n:],
        y_target=y[:, n:],
        lengthscale=lengthscale,
        sigma_f=sigma_f,
        family=family,
    )


def eval_accuracy(logits, targets: np.ndarray) -> float:
    """Mean argmax-match fraction; ties break toward the lowest class."""
    if isinstance(logits, Prediction):
        logits = logits.logits
    data = getattr(logits, "data", logits)
    pred = np.argmax(data, axis=-1)
    return float((pred == targets).mean())


def gaussian_logpdf(
    y: np.ndarray, mean: np.ndarray, scale: np.ndarray
) -> np.ndarray:
    return (
        -0.5 * ((y - mean) / scale) ** 2
        - np.log(scale)
        - 0.5 * np.log(2.0 * np.pi)
    )


def eval_loglik(prediction: Prediction, targets: np.ndarray) -> float:
    """Mean Gaussian log-density of targets under the predicted head."""
    mean = prediction.mean.data
    scale = gaussian_scale_np(prediction.pre_scale.data)
    return float(gaussian_logpdf(targets, mean, scale).mean())


def dump_jsonl(path: str | Path, records: list[dict]) -> None:
    """Newline-delimited dataset dump; arrays become nested lists."""
    with open(path, "w") as fh:
        for rec in records:
            enc = {
                key: value.tolist() if isinstance(value, np.ndarray) else value
                for key, value in rec.items()
            }
            fh.write(json.dumps(enc) + "\n")


def load_jsonl(path: str | Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def copy_batch_record(batch: CopyBatch, split: str, seed: int) -> dict:
    return {
        "kind": "copy",
        "split": split,
        "seed": seed,
        "k": batch.k,
        "context_ids": batch.context_ids,
        "targets": batch.targets,
    }


def gp_batch_record(batch: GPBatch, split: str, seed: int) -> dict:
    return {
        "kind": "gp",
        "split": split,
        "seed": seed,
        "family": batch.family,
        "x_context": batch.x_context,
        "y_context": batch.y_context,
        "x_target": batch.x_target,
        "y_target": batch.y_target,
        "lengthscale": batch.lengthscale,
        "sigma_f": batch.sigma_f,
    }
