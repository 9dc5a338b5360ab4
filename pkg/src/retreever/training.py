"""The three-term objective and the training loop.

Total loss: L_TCA + lambda_RL * L_RL + lambda_CA * L_CA, where L_TCA scores
the prediction made from the sampled selected set, L_CA scores the same
queries cross-attending all leaves, and L_RL is undiscounted REINFORCE with
an entropy bonus. Each query is its own episode: its reward (detached) is
applied at every step of its trace, and the returned value is the negation
of the maximization objective averaged over queries.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from . import engine
from .engine import AdamState, Array, Tape, adam_step, clip_global_norm
from .errors import ConfigError, PoisonedUpdateError, ShapeError
from .models import Prediction, build_model, gaussian_scale_np
from .tasks import (
    eval_accuracy,
    eval_loglik,
    gaussian_logpdf,
    gen_copy_batch,
    gen_gp_batch,
)
from .tca import BatchedSelection

if TYPE_CHECKING:
    from .config import RunConfig

METRICS_COLUMNS = [
    "step",
    "loss_total",
    "loss_tca",
    "loss_rl",
    "loss_ca",
    "reward_mean",
    "entropy_mean",
    "eval_metric",
    "tokens_per_query",
    "wall_ms",
    "run_id",
    "config_hash",
]

REWARD_KINDS = ("accuracy", "neg_task_loss")


@dataclass
class LossWeights:
    lambda_rl: float = 1.0
    lambda_ca: float = 1.0
    alpha: float = 0.01

    def __post_init__(self):
        if self.lambda_rl < 0 or self.lambda_ca < 0 or self.alpha < 0:
            raise ConfigError("loss weights must be nonnegative")


@dataclass
class RewardSpec:
    kind: str = "accuracy"
    baseline: bool = False  # subtract the batch-mean reward before REINFORCE

    def __post_init__(self):
        if self.kind not in REWARD_KINDS:
            raise ConfigError(
                f"reward kind must be one of {REWARD_KINDS}, got {self.kind!r}"
            )


def _per_query_loss(prediction: Prediction, targets: np.ndarray) -> Array:
    """Cross-entropy or Gaussian NLL per query, shape (B, M)."""
    if prediction.logits is not None:
        logits = prediction.logits
        if targets.shape != logits.shape[:-1]:
            raise ShapeError(
                f"targets {targets.shape} do not match logits {logits.shape}"
            )
        logp = engine.log_softmax(logits)
        picked = engine.gather_last(logp, targets[..., None].astype(np.int64))
        return engine.reshape(engine.neg(picked), targets.shape)
    mean, pre_scale = prediction.mean, prediction.pre_scale
    if targets.shape != mean.shape:
        raise ShapeError(f"targets {targets.shape} do not match mean {mean.shape}")
    scale = prediction.scale()
    y = Array(targets, dtype=mean.dtype.type)
    z = (y - mean) / scale
    nll = 0.5 * (z * z) + engine.log(scale) + 0.5 * float(np.log(2.0 * np.pi))
    return engine.reduce_mean(nll, axis=-1)


def tca_loss(prediction: Prediction, targets: np.ndarray) -> Array:
    """Task loss of the selected-set path, averaged over queries."""
    return engine.reduce_mean(_per_query_loss(prediction, targets))


def ca_loss(prediction: Prediction, targets: np.ndarray) -> Array:
    """Same functional, applied to the all-leaves cross-attention path."""
    return engine.reduce_mean(_per_query_loss(prediction, targets))


def compute_reward(
    prediction: Prediction, targets: np.ndarray, spec: RewardSpec
) -> np.ndarray:
    """Detached per-query reward, shape (B, M)."""
    if spec.kind == "accuracy":
        if prediction.logits is None:
            raise ConfigError("accuracy reward requires a classification head")
        pred = np.argmax(prediction.logits.data, axis=-1)
        return (pred == targets).astype(np.float64)
    if prediction.logits is not None:
        logits = prediction.logits.data
        shifted = logits - logits.max(axis=-1, keepdims=True)
        logz = np.log(np.exp(shifted).sum(axis=-1))
        picked = np.take_along_axis(shifted, targets[..., None], axis=-1)[..., 0]
        return picked - logz
    scale = gaussian_scale_np(prediction.pre_scale.data)
    ll = gaussian_logpdf(targets, prediction.mean.data, scale)
    return ll.mean(axis=-1)


def reinforce_loss(
    sel: BatchedSelection, rewards: np.ndarray, alpha: float
) -> Array:
    """Negated REINFORCE objective with entropy bonus, averaged over queries.

    rewards are treated as constants; the undiscounted per-episode reward is
    applied at every step of each query's trace.
    """
    H = sel.logp.shape[-1]
    if H == 0:
        return Array(np.zeros((), dtype=sel.logp.data.dtype))
    r = Array(
        np.broadcast_to(rewards[..., None], sel.logp.shape).astype(
            sel.logp.data.dtype
        )
    )
    per_step = r * sel.logp + float(alpha) * sel.entropy
    per_query = engine.reduce_sum(per_step, axis=-1)
    return engine.neg(engine.reduce_mean(per_query))


def total_loss(
    prediction: Prediction,
    leaves_prediction: Prediction | None,
    sel: BatchedSelection | None,
    targets: np.ndarray,
    weights: LossWeights,
    reward_spec: RewardSpec,
) -> tuple[Array, dict[str, float]]:
    """L_TCA + lambda_RL * L_RL + lambda_CA * L_CA with logged components."""
    l_tca = tca_loss(prediction, targets)
    total = l_tca
    comps = {
        "loss_tca": l_tca.item(),
        "loss_rl": 0.0,
        "loss_ca": 0.0,
        "reward_mean": 0.0,
        "entropy_mean": 0.0,
    }
    if sel is not None:
        rewards = compute_reward(prediction, targets, reward_spec)
        comps["reward_mean"] = float(rewards.mean())
        if sel.entropy.data.size:
            comps["entropy_mean"] = float(sel.entropy.data.mean())
        if reward_spec.baseline:
            rewards = rewards - rewards.mean()
        l_rl = reinforce_loss(sel, rewards, weights.alpha)
        comps["loss_rl"] = l_rl.item()
        total = total + weights.lambda_rl * l_rl
    if leaves_prediction is not None:
        l_ca = ca_loss(leaves_prediction, targets)
        comps["loss_ca"] = l_ca.item()
        total = total + weights.lambda_ca * l_ca
    comps["loss_total"] = total.item()
    return total, comps


# ----------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    steps_run: int
    eval_metric: float
    tokens_per_query: float
    checkpoint_path: str
    metrics_path: str


def _model_targets(cfg: "RunConfig", batch):
    """(context, positions, queries, targets) quartet for model.forward."""
    if cfg.task.name == "copy":
        return batch.context, batch.positions, batch.query_positions, batch.targets
    return batch.context, batch.positions, batch.x_target, batch.y_target


def evaluate(model, cfg: "RunConfig", rng: np.random.Generator, mode: str = "argmax"):
    """Argmax-retrieval evaluation; returns (metric, tokens_per_query)."""
    metrics: list[float] = []
    tokens: list[float] = []
    weights: list[int] = []
    for _ in range(cfg.train.eval_batches):
        batch = _make_batch(cfg, cfg.train.eval_batch_size, rng)
        context, positions, queries, targets = _model_targets(cfg, batch)
        pred, sel, _ = model.forward(
            context, positions, queries, mode=mode, rng=rng, train=False
        )
        if cfg.task.name == "copy":
            metrics.append(eval_accuracy(pred, targets))
        else:
            metrics.append(eval_loglik(pred, targets))
        tokens.append(pred.tokens_per_query)
        weights.append(targets.size)
    total = sum(weights)
    metric = sum(m * w for m, w in zip(metrics, weights)) / total
    toks = sum(t * w for t, w in zip(tokens, weights)) / total
    return float(metric), float(toks)


def _make_batch(cfg: "RunConfig", batch_size: int, rng: np.random.Generator):
    if cfg.task.name == "copy":
        return gen_copy_batch(cfg.task.k, batch_size, rng)
    return gen_gp_batch(cfg.task.family, batch_size, rng)


def train_loop(cfg: "RunConfig", resume: str | None = None) -> TrainResult:
    """Seeded sample -> forward -> loss -> backward -> Adam loop.

    Writes metrics.csv, checkpoint.bin, and resolved.yaml under cfg.out_dir;
    aborts with a diagnostic snapshot if the loss goes non-finite.
    """
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(cfg.seed).spawn(4)
    init_rng = np.random.default_rng(seeds[0])
    data_rng = np.random.default_rng(seeds[1])
    step_rng = np.random.default_rng(seeds[2])
    eval_seed = seeds[3]  # re-instantiated per eval: fixed eval data
    model = build_model(cfg.model_config(), init_rng)
    params = model.params()
    adam = AdamState.init(
        params,
        lr=cfg.optim.lr,
        beta1=cfg.optim.beta1,
        beta2=cfg.optim.beta2,
        eps=cfg.optim.eps,
    )
    start_step = 0
    if resume is not None:
        start_step = load_train_state(resume, model, adam)

    weights = LossWeights(
        lambda_rl=cfg.loss.lambda_rl, lambda_ca=cfg.loss.lambda_ca, alpha=cfg.loss.alpha
    )
    reward_spec = RewardSpec(kind=cfg.loss.reward, baseline=cfg.loss.baseline)
    want_leaves = cfg.loss.lambda_ca > 0.0 and cfg.model.variant == "retreever"

    cfg.save_resolved(out_dir / "resolved.yaml")
    run_id = f"{cfg.config_hash()[:8]}-s{cfg.seed}"
    metrics_path = out_dir / "metrics.csv"
    checkpoint_path = out_dir / "checkpoint.bin"
    metric, toks = float("nan"), 0.0
    last_emit = time.monotonic()

    with open(metrics_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        for step in range(start_step + 1, cfg.train.steps + 1):
            batch = _make_batch(cfg, cfg.train.batch_size, data_rng)
            context, positions, queries, targets = _model_targets(cfg, batch)
            with Tape() as tape:
                pred, sel, leaves_pred = model.forward(
                    context,
                    positions,
                    queries,
                    mode="sample",
                    rng=step_rng,
                    train=True,
                    want_leaves=want_leaves,
                    tree_seed=step,
                )
                loss, comps = total_loss(
                    pred, leaves_pred, sel, targets, weights, reward_spec
                )
            if not np.isfinite(comps["loss_total"]):
                snapshot = {
                    "step": step,
                    "components": comps,
                    "param_norm": float(
                        np.sqrt(sum(float((p.data**2).sum()) for p in params))
                    ),
                }
                with open(out_dir / "diagnostic.json", "w") as dfh:
                    json.dump(snapshot, dfh, indent=2)
                raise PoisonedUpdateError(
                    f"non-finite loss at step {step}; snapshot at "
                    f"{out_dir / 'diagnostic.json'}"
                )
            tape.backward(loss)
            grads = [tape.grad(p) for p in params]
            clip_global_norm(grads, cfg.optim.grad_clip)
            adam_step(params, grads, adam)

            if step % cfg.train.eval_every == 0 or step == cfg.train.steps:
                metric, toks = evaluate(model, cfg, np.random.default_rng(eval_seed))
                now = time.monotonic()
                writer.writerow(
                    [
                        step,
                        f"{comps['loss_total']:.6f}",
                        f"{comps['loss_tca']:.6f}",
                        f"{comps['loss_rl']:.6f}",
                        f"{comps['loss_ca']:.6f}",
                        f"{comps['reward_mean']:.6f}",
                        f"{comps['entropy_mean']:.6f}",
                        f"{metric:.6f}",
                        f"{toks:.3f}",
                        f"{(now - last_emit) * 1000.0:.1f}",
                        run_id,
                        cfg.config_hash(),
                    ]
                )
                fh.flush()
                last_emit = now

    save_train_state(checkpoint_path, model, adam, cfg.train.steps)
    return TrainResult(
        steps_run=cfg.train.steps - start_step,
        eval_metric=metric,
        tokens_per_query=toks,
        checkpoint_path=str(checkpoint_path),
        metrics_path=str(metrics_path),
    )


def save_train_state(path, model, adam: AdamState, step: int) -> None:
    tensors = dict(model.state())
    for i, (m, v) in enumerate(zip(adam.m, adam.v)):
        tensors[f"adam.m.{i}"] = m
        tensors[f"adam.v.{i}"] = v
    tensors["meta.step"] = np.asarray([float(step)], dtype=np.float32)
    engine.save_checkpoint(path, tensors)


def load_train_state(path, model, adam: AdamState | None = None) -> int:
    tensors = engine.load_checkpoint(path)
    model.load_state(
        {k: v for k, v in tensors.items() if not k.startswith(("adam.", "meta."))}
    )
    if adam is not None:
        for i in range(len(adam.m)):
            if f"adam.m.{i}" in tensors:
                adam.m[i][...] = tensors[f"adam.m.{i}"].reshape(adam.m[i].shape)
                adam.v[i][...] = tensors[f"adam.v.{i}"].reshape(adam.v[i].shape)
    step = tensors.get("meta.step")
    if adam is not None and step is not None:
        adam.step = int(step[0])
    return int(step[0]) if step is not None else 0
