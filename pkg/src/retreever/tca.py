"""Tree cross attention: policy-guided retrieval and attention over S.

Retrieval follows the root-to-leaf search: at each internal node the policy
scores the children against the query and one child is sampled (training)
or taken by argmax (evaluation); the rejected real siblings join S, and the
terminal leaf is added last. The subtrees rooted at S partition the real
leaves, so |S| = 1 + sum over steps of (real children - 1).

The batched path runs every query of every batch element in lockstep, one
vectorized policy call per tree level.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import engine
from .attention import AttentionBlock
from .engine import Array
from .errors import ConfigError, ShapeError
from .nn import Linear, Module
from .tree import Tree

MODES = ("sample", "argmax")


class RetrievalPolicy(Module):
    """Attention-style child scorer with temperature 1.

    With ``share_projections`` (the default) the scorer reuses the Q/K
    projections of the given cross-attention block as a single
    full-width head; otherwise it owns an independent projection pair.
    """

    def __init__(
        self,
        d: int,
        ca: AttentionBlock | None = None,
        rng: np.random.Generator | None = None,
        share_projections: bool = True,
        dtype=None,
    ):
        self.share_projections = share_projections
        self.d = d
        if share_projections:
            if ca is None:
                raise ConfigError("shared policy projections need a cross-attention block")
            self._wq = ca.wq
            self._wk = ca.wk
        else:
            if rng is None:
                raise ConfigError("unshared policy projections need an init rng")
            self.own_wq = Linear(d, d, rng, dtype=dtype)
            self.own_wk = Linear(d, d, rng, dtype=dtype)
            self._wq = self.own_wq
            self._wk = self.own_wk

    def score(self, queries: Array, child_h: Array) -> Array:
        """Scaled dot products: queries (..., M, D) x child_h (..., M, C, D)
        -> logits (..., M, C)."""
        qp = self._wq(queries)
        kp = self._wk(child_h)
        lead = kp.shape[:-2]
        q4 = engine.reshape(qp, qp.shape[:-1] + (qp.shape[-1], 1))
        logits = engine.matmul(kp, q4)  # (..., M, C, 1)
        logits = engine.reshape(logits, lead + (kp.shape[-2],))
        return logits * (1.0 / float(np.sqrt(self.d)))


@dataclass
class TraceStep:
    """One retrieval decision, with detached numbers for inspection."""

    depth: int
    node: int
    probs: np.ndarray
    action: int
    s_size: int


@dataclass
class SelectedSet:
    """Ordered node handles S with embeddings and the differentiable trace."""

    nodes: list[int]
    embeddings: Array
    steps: list[TraceStep]
    logp: Array | None = None  # (H,) chosen-action log-probs
    entropy: Array | None = None  # (H,) per-step policy entropies


@dataclass
class BatchedSelection:
    """Vectorized retrieval outcome for (batch, M) queries.

    Slot layout: step t owns slots [t*(b_f-1), (t+1)*(b_f-1)) for rejected
    siblings (invalid when the sibling is padding), and the last slot holds
    the terminal leaf.
    """

    s_idx: np.ndarray  # (B, M, S_slots) heap node ids
    s_valid: np.ndarray  # (B, M, S_slots) bool
    actions: np.ndarray  # (B, M, H)
    logp: Array  # (B, M, H)
    entropy: Array  # (B, M, H)
    probs: list[np.ndarray] = field(default_factory=list)  # per step (B, M, b_f)

    @property
    def tokens_per_query(self) -> np.ndarray:
        """|S| per query, shape (B, M)."""
        return self.s_valid.sum(axis=-1)


def retrieve_batch(
    tree: Tree,
    queries: Array,
    policy: RetrievalPolicy,
    mode: str = "sample",
    rng: np.random.Generator | None = None,
    record_probs: bool = False,
) -> BatchedSelection:
    """Run the root-to-leaf search for all queries at once.

    ``queries`` is (B, M, D) with B equal to the tree batch or 1 (broadcast).
    """
    tree.require_aggregated()
    if mode not in MODES:
        raise ConfigError(f"retrieval mode must be one of {MODES}, got {mode!r}")
    if mode == "sample" and rng is None:
        raise ConfigError("sampled retrieval needs an rng")
    if queries.ndim != 3:
        raise ShapeError(f"queries must be (B, M, D), got {queries.shape}")
    B = tree.batch
    M = queries.shape[1]
    b_f, H = tree.b_f, tree.height
    s_slots = H * (b_f - 1) + 1
    s_idx = np.zeros((B, M, s_slots), dtype=np.int64)
    s_valid = np.zeros((B, M, s_slots), dtype=bool)
    actions = np.zeros((B, M, H), dtype=np.int64)
    cur = np.zeros((B, M), dtype=np.int64)
    logp_steps: list[Array] = []
    ent_steps: list[Array] = []
    probs_steps: list[np.ndarray] = []
    sib_pos_base = np.arange(b_f - 1, dtype=np.int64)[None, None, :]

    for t in range(H):
        child_idx = (cur * b_f + 1)[..., None] + np.arange(b_f, dtype=np.int64)
        child_real = tree.node_real[child_idx]  # (B, M, b_f)
        child_h = engine.gather_rows(tree.h, child_idx.reshape(B, M * b_f))
        child_h = engine.reshape(child_h, (B, M, b_f, child_h.shape[-1]))
        logits = policy.score(queries, child_h)
        logp = engine.log_softmax(logits, mask=child_real)
        p = np.exp(logp.data)
        if mode == "argmax":
            act = p.argmax(axis=-1)
        else:
            u = rng.random((B, M, 1))
            act = (u > np.cumsum(p, axis=-1)).sum(axis=-1)
            act = np.minimum(act, b_f - 1)
            # guard against float round-off landing on a padded child
            picked_real = np.take_along_axis(child_real, act[..., None], -1)[..., 0]
            act = np.where(picked_real, act, p.argmax(axis=-1))
        chosen_lp = engine.gather_last(logp, act[..., None])  # (B, M, 1)
        ent = engine.reduce_sum(engine.exp(logp) * logp, axis=-1, keepdims=True)
        logp_steps.append(chosen_lp)
        ent_steps.append(engine.neg(ent))
        if record_probs:
            probs_steps.append(p)
        sib_pos = sib_pos_base + (sib_pos_base >= act[..., None])
        s_idx[:, :, t * (b_f - 1) : (t + 1) * (b_f - 1)] = np.take_along_axis(
            child_idx, sib_pos, -1
        )
        s_valid[:, :, t * (b_f - 1) : (t + 1) * (b_f - 1)] = np.take_along_axis(
            child_real, sib_pos, -1
        )
        actions[:, :, t] = act
        cur = np.take_along_axis(child_idx, act[..., None], -1)[..., 0]

    s_idx[:, :, -1] = cur
    s_valid[:, :, -1] = True
    dtype = tree.h.dtype
    if H > 0:
        logp_all = engine.concat(logp_steps, axis=-1)
        ent_all = engine.concat(ent_steps, axis=-1)
    else:
        logp_all = Array(np.zeros((B, M, 0), dtype=dtype))
        ent_all = Array(np.zeros((B, M, 0), dtype=dtype))
    return BatchedSelection(
        s_idx=s_idx,
        s_valid=s_valid,
        actions=actions,
        logp=logp_all,
        entropy=ent_all,
        probs=probs_steps,
    )


def full_selection(tree: Tree) -> BatchedSelection:
    """All real leaves for every query (shared S, no trace)."""
    tree.require_aggregated()
    idx = tree.leaf_nodes_real[None, None, :]
    B = tree.batch
    s_idx = np.broadcast_to(idx, (B, 1, tree.n_real))
    s_valid = np.ones((B, 1, tree.n_real), dtype=bool)
    dtype = tree.h.dtype
    return BatchedSelection(
        s_idx=s_idx,
        s_valid=s_valid,
        actions=np.zeros((B, 1, 0), dtype=np.int64),
        logp=Array(np.zeros((B, 1, 0), dtype=dtype)),
        entropy=Array(np.zeros((B, 1, 0), dtype=dtype)),
    )


def _stacked_embeddings(tree: Tree, nodes: list[int]) -> Array:
    idx = np.asarray(nodes, dtype=np.int64)[None, :]
    emb = engine.gather_rows(tree.h, np.broadcast_to(idx, (tree.batch, len(nodes))))
    if tree.batch == 1:
        emb = engine.reshape(emb, emb.shape[1:])
    return emb


def retrieve(
    tree: Tree,
    q: Array,
    policy: RetrievalPolicy,
    mode: str = "argmax",
    rng: np.random.Generator | None = None,
) -> SelectedSet:
    """Single-query retrieval returning the ordered selected set S."""
    tree.require_aggregated()
    if tree.batch != 1:
        raise ShapeError("single-query retrieve expects a batch-1 tree")
    if q.ndim == 1:
        q = engine.reshape(q, (1, 1, q.shape[0]))
    elif q.ndim == 2:
        q = engine.reshape(q, (1,) + q.shape)
    if q.shape[:2] != (1, 1):
        raise ShapeError(f"single-query retrieve expects one query, got {q.shape}")
    sel = retrieve_batch(tree, q, policy, mode=mode, rng=rng, record_probs=True)
    valid = sel.s_valid[0, 0]
    nodes = [int(i) for i in sel.s_idx[0, 0][valid]]
    b_f, H = tree.b_f, sel.actions.shape[-1]
    steps: list[TraceStep] = []
    running = 0
    for t in range(H):
        sibling = int(sel.s_idx[0, 0, t * (b_f - 1)])
        running += int(valid[t * (b_f - 1) : (t + 1) * (b_f - 1)].sum())
        steps.append(
            TraceStep(
                depth=t,
                node=(sibling - 1) // b_f,
                probs=sel.probs[t][0, 0],
                action=int(sel.actions[0, 0, t]),
                s_size=running,
            )
        )
    return SelectedSet(
        nodes=nodes,
        embeddings=_stacked_embeddings(tree, nodes),
        steps=steps,
        logp=engine.reshape(sel.logp, (H,)) if H else None,
        entropy=engine.reshape(sel.entropy, (H,)) if H else None,
    )


def retrieve_full(tree: Tree) -> SelectedSet:
    """S = all real leaves, in leaf order; empty trace."""
    tree.require_aggregated()
    nodes = [int(i) for i in tree.leaf_nodes_real]
    return SelectedSet(
        nodes=nodes,
        embeddings=_stacked_embeddings(tree, nodes),
        steps=[],
        logp=None,
        entropy=None,
    )


def attend_selection(
    tree: Tree,
    queries: Array,
    sel: BatchedSelection,
    ca: AttentionBlock,
    rng: np.random.Generator | None = None,
    train: bool = False,
) -> Array:
    """Cross-attend each query over its own selected set. queries (B|1, M, D)
    -> (B, M, D)."""
    B = tree.batch
    M = queries.shape[1]
    D = queries.shape[-1]
    n_sel = sel.s_idx.shape[-1]
    if sel.s_idx.shape[1] == 1 and M > 1:
        # shared selection (retrieve_full): keys are the same for all queries
        kv = engine.gather_rows(tree.h, sel.s_idx[:, 0, :])
        out = ca.attend(queries, kv, key_mask=sel.s_valid[:, 0, :], rng=rng, train=train)
        return out
    kv = engine.gather_rows(tree.h, sel.s_idx.reshape(B, M * n_sel))
    kv = engine.reshape(kv, (B, M, n_sel, D))
    q4 = engine.reshape(queries, queries.shape[:2] + (1, D))
    out = ca.attend(q4, kv, key_mask=sel.s_valid, rng=rng, train=train)
    return engine.reshape(out, out.shape[:2] + (D,))


def tca_forward(
    tree: Tree,
    queries: Array,
    policy: RetrievalPolicy,
    ca: AttentionBlock,
    mode: str = "sample",
    rng: np.random.Generator | None = None,
    train: bool = False,
) -> tuple[Array, BatchedSelection]:
    """Retrieve S per query, then cross-attend; (B, M, D) plus the traces."""
    squeezed = queries.ndim == 2
    if squeezed:
        queries = engine.reshape(queries, (1,) + queries.shape)
    sel = retrieve_batch(tree, queries, policy, mode=mode, rng=rng)
    out = attend_selection(tree, queries, sel, ca, rng=rng, train=train)
    if squeezed:
        out = engine.reshape(out, out.shape[1:])
    return out, sel


def format_trace(selected: SelectedSet) -> str:
    """One line per decision: depth, node id, child probabilities, chosen
    action, running |S|; final line reports the terminal leaf and |S|."""
    lines = []
    for step in selected.steps:
        probs = ", ".join(f"{p:.4f}" for p in step.probs)
        lines.append(
            f"depth={step.depth} node={step.node} probs=[{probs}] "
            f"action={step.action} |S|={step.s_size}"
        )
    lines.append(f"leaf node={selected.nodes[-1]} |S|={len(selected.nodes)}")
    return "\n".join(lines)
