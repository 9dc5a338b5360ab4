"""Benchmark harness: token/memory scaling study and ablation sweeps.

The scaling study is structural, so it runs on untrained weights: per context
size N it reports attended tokens per query for tree retrieval vs full cross
attention, and the peak resident bytes of the retrieval+attention step as
measured by the allocation counter. Tree construction and aggregation happen
outside the measured region; only the per-query work is counted.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, replace
from itertools import product
from pathlib import Path

import numpy as np

from .attention import AttentionBlock
from .config import RunConfig, SweepSection
from .engine import AllocationCounter, Array
from .tca import RetrievalPolicy, attend_selection, retrieve_batch
from .training import TrainResult, train_loop
from .tree import aggregate, build_tree, selected_count

DEFAULT_NS = (128, 256, 512, 1024, 2048, 4096)

SCALING_COLUMNS = [
    "N",
    "b_f",
    "tca_tokens",
    "ca_tokens",
    "tca_peak_bytes",
    "ca_peak_bytes",
    "config_hash",
]


@dataclass
class ScalingRow:
    N: int
    b_f: int
    tca_tokens: int
    ca_tokens: int
    tca_peak_bytes: int
    ca_peak_bytes: int


def measure_scaling(
    N: int,
    b_f: int = 2,
    d_model: int = 64,
    heads: int = 4,
    n_queries: int = 16,
    seed: int = 0,
) -> ScalingRow:
    """Token counts and peak allocation bytes for one context size."""
    rng = np.random.default_rng(seed)
    agg = AttentionBlock(d_model, heads, rng, cross=False)
    ca = AttentionBlock(d_model, heads, rng, cross=True)
    policy = RetrievalPolicy(d_model, ca=ca, share_projections=True)
    enc = Array(rng.standard_normal((1, N, d_model)).astype(np.float32))
    q = Array(rng.standard_normal((1, n_queries, d_model)).astype(np.float32))

    tree = build_tree(enc, b_f=b_f)
    aggregate(tree, agg)

    with AllocationCounter() as tca_counter:
        sel = retrieve_batch(tree, q, policy, mode="argmax")
        attend_selection(tree, q, sel, ca, train=False)
    with AllocationCounter() as ca_counter:
        ca.attend(q, enc, train=False)

    return ScalingRow(
        N=N,
        b_f=b_f,
        tca_tokens=selected_count(N, b_f),
        ca_tokens=N,
        tca_peak_bytes=tca_counter.peak_bytes,
        ca_peak_bytes=ca_counter.peak_bytes,
    )


def run_scaling(
    ns=DEFAULT_NS,
    b_f: int = 2,
    d_model: int = 64,
    heads: int = 4,
    n_queries: int = 16,
    seed: int = 0,
) -> list[ScalingRow]:
    return [
        measure_scaling(n, b_f=b_f, d_model=d_model, heads=heads,
                        n_queries=n_queries, seed=seed)
        for n in ns
    ]


def scaling_hash(ns, b_f: int, d_model: int, heads: int, n_queries: int) -> str:
    canon = json.dumps(
        {"ns": list(ns), "b_f": b_f, "d_model": d_model,
         "heads": heads, "n_queries": n_queries},
        sort_keys=True,
    )
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def write_scaling_csv(rows: list[ScalingRow], path, config_hash: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SCALING_COLUMNS)
        for r in rows:
            writer.writerow(
                [r.N, r.b_f, r.tca_tokens, r.ca_tokens,
                 r.tca_peak_bytes, r.ca_peak_bytes, config_hash]
            )


# ----------------------------------------------------------------------------
# ablation sweeps


def ablate_cells(cfg: RunConfig) -> list[RunConfig]:
    """One RunConfig per grid cell, each writing under its own directory."""
    sweep = cfg.sweep if cfg.sweep is not None else SweepSection()
    base_out = Path(cfg.out_dir)
    cells = []
    grid = product(sweep.lambda_rl, sweep.lambda_ca, sweep.alpha, sweep.reward)
    for lam_rl, lam_ca, alpha, reward in grid:
        name = f"rl{lam_rl:g}_ca{lam_ca:g}_a{alpha:g}_{reward}"
        loss = replace(
            cfg.loss,
            lambda_rl=float(lam_rl),
            lambda_ca=float(lam_ca),
            alpha=float(alpha),
            reward=str(reward),
        )
        cells.append(
            replace(cfg, loss=loss, sweep=None, out_dir=str(base_out / name))
        )
    return cells


MANIFEST_COLUMNS = [
    "cell",
    "lambda_rl",
    "lambda_ca",
    "alpha",
    "reward",
    "config_hash",
    "metrics_csv",
]


def run_ablation(cfg: RunConfig) -> tuple[str, list[TrainResult]]:
    """Run every cell sequentially; returns (manifest path, results)."""
    base_out = Path(cfg.out_dir)
    base_out.mkdir(parents=True, exist_ok=True)
    cells = ablate_cells(cfg)
    manifest_path = base_out / "manifest.csv"
    results = []
    with open(manifest_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        for cell in cells:
            result = train_loop(cell)
            results.append(result)
            writer.writerow(
                [
                    Path(cell.out_dir).name,
                    cell.loss.lambda_rl,
                    cell.loss.lambda_ca,
                    cell.loss.alpha,
                    cell.loss.reward,
                    cell.config_hash(),
                    result.metrics_path,
                ]
            )
            fh.flush()
    return str(manifest_path), results
