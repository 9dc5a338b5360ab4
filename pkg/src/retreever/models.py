"""End-to-end predictors sharing one prediction-head interface.

All variants expose ``forward(context, positions, queries, ...)`` returning
``(Prediction, selection, leaves_prediction)``; the two TCA variants fill
``selection`` with per-query retrieval traces, and ``leaves_prediction``
carries the all-leaves cross-attention path used by the auxiliary loss.

Context comes in two flavors, chosen by the config: id tokens with learned
absolute position embeddings (copy task), or raw feature vectors projected
linearly (regression). Queries pass through a small feed-forward embedder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine
from .attention import AttentionBlock, EncoderStack
from .engine import Array
from .errors import ConfigError, ShapeError
from .nn import MLP, Embedding, Linear, Module
from .tca import (
    BatchedSelection,
    RetrievalPolicy,
    attend_selection,
    full_selection,
    retrieve_batch,
)
from .tree import aggregate, build_tree

VARIANTS = ("retreever", "retreever_full", "transformer_ca", "perceiver")
HEADS = ("classification", "gaussian")

SCALE_FLOOR = 1e-3  # added to softplus(pre_scale) against 32-bit collapse


@dataclass
class ModelConfig:
    variant: str = "retreever"
    d_model: int = 64
    heads: int = 4
    encoder_depth: int = 2
    ffn_ratio: int = 4
    dropout: float = 0.0
    head: str = "classification"
    vocab_size: int = 12
    out_dim: int = 1
    latents: int = 8
    b_f: int = 2
    ordering: str = "index"
    share_policy_projections: bool = True
    max_positions: int = 0  # id-token mode: position-table size (0 = feature mode)
    context_features: int = 0  # feature mode: context vector width
    query_features: int = 0  # feature mode: query vector width

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.head not in HEADS:
            raise ConfigError(f"head must be one of {HEADS}, got {self.head!r}")
        if self.head == "classification" and self.vocab_size < 2:
            raise ConfigError("classification head needs vocab_size >= 2")
        if self.variant == "perceiver" and self.latents < 1:
            raise ConfigError("perceiver needs latents >= 1")
        if self.max_positions == 0 and self.context_features == 0:
            raise ConfigError("set max_positions (id tokens) or context_features")


@dataclass
class Prediction:
    """Head outputs plus the attended-tokens-per-query accounting."""

    logits: Array | None = None
    mean: Array | None = None
    pre_scale: Array | None = None
    tokens_per_query: float = 0.0

    def scale(self) -> Array:
        """Strictly positive Gaussian scale, softplus(pre_scale) + floor."""
        return engine.softplus(self.pre_scale) + SCALE_FLOOR


def gaussian_scale_np(pre_scale: np.ndarray) -> np.ndarray:
    """Numpy twin of Prediction.scale for detached evaluation."""
    return np.maximum(pre_scale, 0.0) + np.log1p(np.exp(-np.abs(pre_scale))) + SCALE_FLOOR


class ContextEmbedder(Module):
    """Embeds context tokens and query descriptors to width D."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=None):
        d = cfg.d_model
        self.id_mode = cfg.max_positions > 0
        if self.id_mode:
            self.tok = Embedding(cfg.vocab_size, d, rng, dtype=dtype)
            self.pos = Embedding(cfg.max_positions, d, rng, dtype=dtype)
        else:
            self.ctx_proj = Linear(cfg.context_features, d, rng, dtype=dtype)
            self.q_proj = Linear(cfg.query_features or 1, d, rng, dtype=dtype)

    def context(self, context, dtype) -> Array:
        if self.id_mode:
            ids, positions = context
            return self.tok(np.asarray(ids)) + self.pos(np.asarray(positions))
        return self.ctx_proj(Array(np.asarray(context), dtype=dtype))

    def queries(self, queries, dtype) -> Array:
        if self.id_mode:
            q = self.pos(np.asarray(queries))
            if q.ndim == 2:
                q = engine.reshape(q, (1,) + q.shape)
            return q
        q = np.asarray(queries)
        if q.ndim == 2:
            q = q[None]
        return self.q_proj(Array(q, dtype=dtype))


class BaseModel(Module):
    """Shared embedding, query MLP, and prediction head."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=None):
        self.cfg = cfg
        self.dtype = dtype or engine.DEFAULT_DTYPE
        d = cfg.d_model
        self.embedder = ContextEmbedder(cfg, rng, dtype=dtype)
        self.query_mlp = MLP(d, d, rng, dtype=dtype)
        if cfg.head == "classification":
            self.head_out = Linear(d, cfg.vocab_size, rng, dtype=dtype)
        else:
            self.head_mean = Linear(d, cfg.out_dim, rng, dtype=dtype)
            self.head_scale = Linear(d, cfg.out_dim, rng, dtype=dtype)

    def _embed(self, context, queries) -> tuple[Array, Array]:
        ctx = self.embedder.context(context, self.dtype)
        q = self.query_mlp(self.embedder.queries(queries, self.dtype))
        return ctx, q

    def _predict(self, feats: Array, tokens_per_query: float) -> Prediction:
        if self.cfg.head == "classification":
            return Prediction(
                logits=self.head_out(feats), tokens_per_query=tokens_per_query
            )
        return Prediction(
            mean=self.head_mean(feats),
            pre_scale=self.head_scale(feats),
            tokens_per_query=tokens_per_query,
        )


class ReTreever(BaseModel):
    """Encoder + tree aggregation + policy-guided tree cross attention."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=None):
        super().__init__(cfg, rng, dtype=dtype)
        d, h, r = cfg.d_model, cfg.heads, cfg.ffn_ratio
        self.encoder = EncoderStack(
            d, h, cfg.encoder_depth, rng, ffn_ratio=r, dropout=cfg.dropout, dtype=dtype
        )
        self.agg = AttentionBlock(
            d, h, rng, cross=False, ffn_ratio=r, dropout=cfg.dropout, dtype=dtype
        )
        self.ca = AttentionBlock(
            d, h, rng, cross=True, ffn_ratio=r, dropout=cfg.dropout, dtype=dtype
        )
        self.policy = RetrievalPolicy(
            d,
            ca=self.ca,
            rng=rng,
            share_projections=cfg.share_policy_projections,
            dtype=dtype,
        )

    def forward(
        self,
        context,
        positions,
        queries,
        mode: str = "sample",
        rng: np.random.Generator | None = None,
        train: bool = False,
        want_leaves: bool = False,
        tree_seed: int = 0,
    ) -> tuple[Prediction, BatchedSelection, Prediction | None]:
        ctx, q = self._embed(context, queries)
        enc = self.encoder(ctx, rng=rng, train=train)
        tree = build_tree(
            enc, positions, ordering=self.cfg.ordering, b_f=self.cfg.b_f, seed=tree_seed
        )
        aggregate(tree, self.agg, rng=rng, train=train)
        if mode == "full":
            sel = full_selection(tree)
        else:
            sel = retrieve_batch(tree, q, self.policy, mode=mode, rng=rng)
        out = attend_selection(tree, q, sel, self.ca, rng=rng, train=train)
        pred = self._predict(out, float(sel.tokens_per_query.mean()))
        leaves_pred = None
        if want_leaves:
            leaves_out = self.ca.attend(q, enc, rng=rng, train=train)
            leaves_pred = self._predict(leaves_out, float(enc.shape[1]))
        return pred, sel, leaves_pred


class ReTreeverFull(BaseModel):
    """Tree pipeline but S = all real leaves (no policy, no trace)."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=None):
        super().__init__(cfg, rng, dtype=dtype)
        d, h, r = cfg.d_model, cfg.heads, cfg.ffn_ratio
        self.encoder = EncoderStack(
            d, h, cfg.encoder_depth, rng, ffn_ratio=r, dropout=cfg.dropout, dtype=dtype
        )
        self.agg = AttentionBlock(
            d, h, rng, cross=False, ffn_ratio=r, dropout=cfg.dropout, dtype=dtype
        )
        self.ca = AttentionBlock(
            d, h, rng, cross=True, ffn_ratio=r, dropout=cfg.dropout, dtype=dtype
        )

    def forward(
        self,
        context,
        positions,
        queries,
        mode: str = "argmax",
        rng: np.random.Generator | None = None,
        train: bool = False,
        want_leaves: bool = False,
        tree_seed: int = 0,
    ) -> tuple[Prediction, BatchedSelection, Prediction | None]:
        ctx, q = self._embed(context, queries)
        enc = self.encoder(ctx, rng=rng, train=train)
        tree = build_tree(
            enc, positions, ordering=self.cfg.ordering, b_f=self.cfg.b_f, seed=tree_seed
        )
        aggregate(tree, self.agg, rng=rng, train=train)
        sel = full_selection(tree)
        out = attend_selection(tree, q, sel, self.ca, rng=rng, train=train)
        pred = self._predict(out, float(tree.n_real))
        return pred, sel, None


class TransformerCA(BaseModel):
    """Encoder over all N tokens; queries cross-attend every encoding."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=None):
        super().__init__(cfg, rng, dtype=dtype)
        d, h, r = cfg.d_model, cfg.heads, cfg.ffn_ratio
        self.encoder = EncoderStack(
            d, h, cfg.encoder_depth, rng, ffn_ratio=r, dropout=cfg.dropout, dtype=dtype
        )
        self.ca = AttentionBlock(
            d, h, rng, cross=True, ffn_ratio=r, dropout=cfg.dropout, dtype=dtype
        )

    def forward(
        self,
        context,
        positions,
        queries,
        mode: str = "argmax",
        rng: np.random.Generator | None = None,
        train: bool = False,
        want_leaves: bool = False,
        tree_seed: int = 0,
    ) -> tuple[Prediction, None, None]:
        ctx, q = self._embed(context, queries)
        enc = self.encoder(ctx, rng=rng, train=train)
        out = self.ca.attend(q, enc, rng=rng, train=train)
        return self._predict(out, float(enc.shape[1])), None, None


class PerceiverIO(BaseModel):
    """Iterative attention over L learned latents, then query decoding."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=None):
        super().__init__(cfg, rng, dtype=dtype)
        d, h, r = cfg.d_model, cfg.heads, cfg.ffn_ratio
        self.latents = engine.parameter(
            rng.normal(0.0, 0.02, size=(cfg.latents, d)),
            name="",
            dtype=dtype or engine.DEFAULT_DTYPE,
        )
        self.cross_blocks = [
            AttentionBlock(d, h, rng, cross=True, ffn_ratio=r, dropout=cfg.dropout, dtype=dtype)
            for _ in range(cfg.encoder_depth)
        ]
        self.self_blocks = [
            AttentionBlock(d, h, rng, cross=False, ffn_ratio=r, dropout=cfg.dropout, dtype=dtype)
            for _ in range(cfg.encoder_depth)
        ]
        self.decoder = AttentionBlock(
            d, h, rng, cross=True, ffn_ratio=r, dropout=cfg.dropout, dtype=dtype
        )

    def forward(
        self,
        context,
        positions,
        queries,
        mode: str = "argmax",
        rng: np.random.Generator | None = None,
        train: bool = False,
        want_leaves: bool = False,
        tree_seed: int = 0,
    ) -> tuple[Prediction, None, None]:
        ctx, q = self._embed(context, queries)
        lat = engine.reshape(self.latents, (1,) + self.latents.shape)
        for cross, self_block in zip(self.cross_blocks, self.self_blocks):
            lat = cross.attend(lat, ctx, rng=rng, train=train)
            lat = self_block.attend(lat, rng=rng, train=train)
        out = self.decoder.attend(q, lat, rng=rng, train=train)
        return self._predict(out, float(self.latents.shape[0])), None, None


def build_model(cfg: ModelConfig, rng: np.random.Generator, dtype=None) -> BaseModel:
    cls = {
        "retreever": ReTreever,
        "retreever_full": ReTreeverFull,
        "transformer_ca": TransformerCA,
        "perceiver": PerceiverIO,
    }[cfg.variant]
    return cls(cfg, rng, dtype=dtype)
