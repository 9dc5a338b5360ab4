"""Command-line interface: train, eval, bench-scaling, ablate, trace.

Every subcommand takes the same flag set (--config, --seed, --out,
--checkpoint, --mode); unused flags are ignored. Invalid configs exit with
status 2 and a field-level message on stderr.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from .bench import (
    DEFAULT_NS,
    run_ablation,
    run_scaling,
    scaling_hash,
    write_scaling_csv,
)
from . import engine
from .config import RunConfig
from .errors import ConfigError, RetreeverError
from .models import build_model
from .tca import format_trace, retrieve
from .training import _make_batch, _model_targets, evaluate, load_train_state, train_loop
from .tree import aggregate, build_tree

COPY_EVAL_SEQUENCES = 3200
EVAL_MODES = ("argmax", "sample", "full")


def _load_config(args) -> RunConfig:
    if not args.config:
        raise ConfigError("this command requires --config")
    try:
        cfg = RunConfig.from_yaml(args.config)
    except OSError as exc:
        raise ConfigError(f"cannot read config {args.config!r}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {args.config!r}: {exc}") from exc
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, out_dir=args.out)
    return cfg


def _eval_rng(cfg: RunConfig) -> np.random.Generator:
    # same derivation as the training loop's eval stream
    return np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(4)[3])


def cmd_train(args) -> int:
    cfg = _load_config(args)
    result = train_loop(cfg, resume=args.checkpoint)
    print(
        f"steps={result.steps_run} eval_metric={result.eval_metric:.4f} "
        f"tokens_per_query={result.tokens_per_query:.2f}"
    )
    print(f"checkpoint={result.checkpoint_path}")
    print(f"metrics={result.metrics_path}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    mode = args.mode or "argmax"
    if mode not in EVAL_MODES:
        raise ConfigError(f"--mode must be one of {EVAL_MODES}, got {mode!r}")
    if not args.checkpoint:
        raise ConfigError("eval requires --checkpoint")
    model = build_model(cfg.model_config(), np.random.default_rng(cfg.seed))
    load_train_state(args.checkpoint, model)
    if cfg.task.name == "copy":
        per_batch = cfg.train.eval_batch_size
        cfg = replace(
            cfg,
            train=replace(
                cfg.train,
                eval_batches=max(1, COPY_EVAL_SEQUENCES // per_batch),
            ),
        )
    metric, tokens = evaluate(model, cfg, _eval_rng(cfg), mode=mode)
    print(f"eval_metric={metric:.4f} tokens_per_query={tokens:.2f} mode={mode}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "eval.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["eval_metric", "tokens_per_query", "mode", "config_hash"]
            )
            writer.writerow([f"{metric:.6f}", f"{tokens:.3f}", mode, cfg.config_hash()])
    return 0


def cmd_bench_scaling(args) -> int:
    b_f, d_model, heads = 2, 64, 4
    if args.config:
        cfg = _load_config(args)
        b_f, d_model, heads = cfg.model.b_f, cfg.model.d_model, cfg.model.heads
    seed = args.seed if args.seed is not None else 0
    rows = run_scaling(DEFAULT_NS, b_f=b_f, d_model=d_model, heads=heads, seed=seed)
    for r in rows:
        print(
            f"N={r.N} tca_tokens={r.tca_tokens} ca_tokens={r.ca_tokens} "
            f"tca_peak_bytes={r.tca_peak_bytes} ca_peak_bytes={r.ca_peak_bytes}"
        )
    out = Path(args.out or "runs/bench")
    out.mkdir(parents=True, exist_ok=True)
    path = out / "scaling.csv"
    write_scaling_csv(rows, path, scaling_hash(DEFAULT_NS, b_f, d_model, heads, 16))
    print(f"scaling={path}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    manifest, results = run_ablation(cfg)
    for res in results:
        print(
            f"cell={Path(res.metrics_path).parent.name} "
            f"eval_metric={res.eval_metric:.4f}"
        )
    print(f"manifest={manifest}")
    return 0


def cmd_trace(args) -> int:
    cfg = _load_config(args)
    if cfg.model.variant != "retreever":
        raise ConfigError("trace requires model.variant retreever")
    mode = args.mode or "argmax"
    if mode not in ("argmax", "sample"):
        raise ConfigError(f"--mode must be argmax or sample for trace, got {mode!r}")
    model = build_model(cfg.model_config(), np.random.default_rng(cfg.seed))
    if args.checkpoint:
        load_train_state(args.checkpoint, model)
    rng = _eval_rng(cfg)
    batch = _make_batch(cfg, 1, rng)
    context, positions, queries, _ = _model_targets(cfg, batch)
    ctx, q = model._embed(context, queries)
    enc = model.encoder(ctx, train=False)
    tree = build_tree(enc, positions, ordering=cfg.model.ordering, b_f=cfg.model.b_f)
    aggregate(tree, model.agg, train=False)
    first_q = engine.gather_rows(q, np.zeros((1, 1), dtype=np.int64))
    selected = retrieve(tree, first_q, model.policy, mode=mode, rng=rng)
    print(format_trace(selected))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="retreever",
        description="Tree cross attention training and benchmarking",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "train": (cmd_train, "train a model from a config file"),
        "eval": (cmd_eval, "evaluate a checkpoint"),
        "bench-scaling": (cmd_bench_scaling, "token/memory scaling study"),
        "ablate": (cmd_ablate, "loss-weight and reward sweep"),
        "trace": (cmd_trace, "print one retrieval trace"),
    }
    for name, (func, help_text) in commands.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="path to a run config file")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=None, help="override output directory")
        p.add_argument("--checkpoint", default=None, help="checkpoint to load")
        p.add_argument("--mode", default=None, help="retrieval mode")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except RetreeverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
