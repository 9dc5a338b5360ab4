"""Balanced b_f-ary trees over ordered context tokens.

Construction sorts tokens by the chosen ordering key and pads the leaf
sequence at the right end up to the next power of b_f; recursive even splits
of the sorted sequence are exactly median splits, so this is the k-d style
balanced construction. Nodes live in a flat heap layout: node 0 is the root
and the children of node i are b_f*i + 1 .. b_f*i + b_f.

Aggregation runs one self-attention call per internal node level (O(N)
aggregator invocations total): each parent embedding is the mean of the
aggregator's outputs over its unmasked children. Fully padded subtrees carry
exact zeros and are masked out of every later computation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import engine
from .attention import AttentionBlock
from .engine import Array
from .errors import ConfigError, EmptyContextError, ShapeError, StateError

ORDERINGS = ("index", "axis", "random_projection", "random")


@dataclass
class Tree:
    """A built (and possibly aggregated) token tree over a batch of inputs."""

    b_f: int
    height: int
    n_real: int
    leaf_count: int
    num_nodes: int
    leaf_start: int
    batch: int
    leaf_perm: np.ndarray  # (batch, leaf_count) source index per slot; 0 when padded
    real_desc: np.ndarray  # (num_nodes,) real-leaf count of each subtree
    node_real: np.ndarray  # (num_nodes,) bool, real_desc > 0
    squeezed: bool = False  # built from an unbatched (N, D) input
    tokens: Array | None = None  # (batch, N, D) leaf source values
    h: Array | None = field(default=None, repr=False)  # (batch, num_nodes, D)

    def require_aggregated(self) -> None:
        if self.h is None:
            raise StateError("tree must be aggregated before retrieval")

    @property
    def leaf_nodes_real(self) -> np.ndarray:
        """Heap indices of the real leaves, in leaf order."""
        return self.leaf_start + np.arange(self.n_real, dtype=np.int64)


def tree_shape(n_real: int, b_f: int) -> tuple[int, int, int, int]:
    """(height, leaf_count, num_nodes, leaf_start) for N real tokens."""
    if n_real < 1:
        raise EmptyContextError("tree needs at least one token")
    if b_f < 2:
        raise ConfigError(f"branching factor must be >= 2, got {b_f}")
    height = 0
    leaf_count = 1
    while leaf_count < n_real:
        leaf_count *= b_f
        height += 1
    num_nodes = (b_f ** (height + 1) - 1) // (b_f - 1)
    leaf_start = (b_f**height - 1) // (b_f - 1)
    return height, leaf_count, num_nodes, leaf_start


def parse_ordering(spec: str) -> tuple[str, int]:
    """Parse an ordering spec string into (kind, axis)."""
    s = spec.strip().lower()
    if s in ("index", "random", "random_projection"):
        return s, 0
    for prefix, suffix in (("axis:", ""), ("axis(", ")")):
        if s.startswith(prefix) and s.endswith(suffix):
            body = s[len(prefix) : len(s) - len(suffix) if suffix else len(s)]
            try:
                return "axis", int(body)
            except ValueError:
                break
    raise ConfigError(f"unknown ordering {spec!r}; expected one of {ORDERINGS}")


def _ordering_perm(
    ordering: str,
    positions: np.ndarray | None,
    batch: int,
    n: int,
    seed: int,
) -> np.ndarray:
    """(batch, n) permutation sending slot -> source token index."""
    kind, axis = parse_ordering(ordering)
    if kind == "index":
        return np.broadcast_to(np.arange(n, dtype=np.int64), (batch, n))
    if kind == "random":
        rng = np.random.default_rng(seed)
        return np.stack([rng.permutation(n) for _ in range(batch)]).astype(np.int64)
    if positions is None:
        raise ConfigError(f"ordering {ordering!r} requires positions")
    pos = np.asarray(positions, dtype=np.float64)
    if pos.ndim == 2:
        pos = pos[None]
    if pos.shape[0] == 1 and batch > 1:
        pos = np.broadcast_to(pos, (batch,) + pos.shape[1:])
    if pos.shape[:2] != (batch, n):
        raise ShapeError(
            f"positions shape {positions.shape} incompatible with batch {batch}, n {n}"
        )
    if kind == "axis":
        if axis >= pos.shape[2]:
            raise ConfigError(f"ordering axis {axis} out of range for {pos.shape}")
        keys = pos[:, :, axis]
    else:  # random_projection
        w = np.random.default_rng(seed).normal(size=pos.shape[2])
        keys = pos @ w
    return np.argsort(keys, axis=1, kind="stable").astype(np.int64)


def build_tree(
    tokens: Array,
    positions: np.ndarray | None = None,
    ordering: str = "index",
    b_f: int = 2,
    seed: int = 0,
) -> Tree:
    """Order tokens, pad to a full b_f-ary leaf set, and lay out the heap.

    ``tokens`` is (N, D) or (batch, N, D); values are attached for
    aggregation but not touched here. Padded slots sit at the right end of
    the leaf sequence, so median splits of the real tokens stay intact.
    """
    squeezed = tokens.ndim == 2
    if squeezed:
        tokens = engine.reshape(tokens, (1,) + tokens.shape)
    if tokens.ndim != 3:
        raise ShapeError(f"tokens must be (N, D) or (B, N, D), got {tokens.shape}")
    batch, n, _ = tokens.shape
    if n < 1:
        raise EmptyContextError("cannot build a tree over zero tokens")
    height, leaf_count, num_nodes, leaf_start = tree_shape(n, b_f)
    perm = _ordering_perm(ordering, positions, batch, n, seed)
    leaf_perm = np.zeros((batch, leaf_count), dtype=np.int64)
    leaf_perm[:, :n] = perm

    real_desc = np.zeros(num_nodes, dtype=np.int64)
    real_desc[leaf_start : leaf_start + n] = 1
    for i in range(leaf_start - 1, -1, -1):
        lo = b_f * i + 1
        real_desc[i] = real_desc[lo : lo + b_f].sum()
    return Tree(
        b_f=b_f,
        height=height,
        n_real=n,
        leaf_count=leaf_count,
        num_nodes=num_nodes,
        leaf_start=leaf_start,
        batch=batch,
        leaf_perm=leaf_perm,
        real_desc=real_desc,
        node_real=real_desc > 0,
        squeezed=squeezed,
        tokens=tokens,
    )


def aggregate(
    tree: Tree,
    agg: AttentionBlock,
    rng: np.random.Generator | None = None,
    train: bool = False,
    leaf_values: Array | None = None,
) -> Tree:
    """Fill every node embedding bottom-up; returns the same tree.

    ``leaf_values`` overrides the (batch, leaf_count, D) leaf matrix, which
    is otherwise gathered from the stored tokens with padded slots borrowing
    (masked) values from token 0.
    """
    b_f = tree.b_f
    if leaf_values is None:
        leaf_values = engine.gather_rows(tree.tokens, tree.leaf_perm)
    if leaf_values.shape[:2] != (tree.batch, tree.leaf_count):
        raise ShapeError(
            f"leaf values {leaf_values.shape} do not match "
            f"({tree.batch}, {tree.leaf_count}, D)"
        )
    levels = [leaf_values]
    child = leaf_values
    child_count = tree.leaf_count
    child_start = tree.leaf_start
    for _ in range(tree.height):
        n_par = child_count // b_f
        par_start = (child_start - 1) // b_f
        d = child.shape[-1]
        groups = engine.reshape(child, (tree.batch, n_par, b_f, d))
        child_real = tree.node_real[child_start : child_start + child_count]
        child_real = child_real.reshape(n_par, b_f)
        parent_real = tree.node_real[par_start : par_start + n_par]
        # fully padded groups attend to everything (then zero out) so the
        # softmax never sees an all-masked row
        attn_mask = child_real | ~parent_real[:, None]
        out = agg.attend(groups, key_mask=attn_mask, rng=rng, train=train)
        keep = child_real[None, :, :, None].astype(child.data.dtype)
        counts = np.maximum(child_real.sum(axis=1), 1).astype(child.data.dtype)
        summed = engine.reduce_sum(out * Array(keep), axis=2)
        parents = summed * Array((1.0 / counts)[None, :, None])
        levels.append(parents)
        child = parents
        child_count = n_par
        child_start = par_start
    tree.h = engine.concat(list(reversed(levels)), axis=1)
    return tree


def selected_count(n_real: int, b_f: int = 2) -> int:
    """|S| = 1 + sum over path steps of (real children - 1), on the padded
    tree, descending into the child with the most real leaves."""
    if n_real < 1:
        raise EmptyContextError("selected_count needs at least one token")
    _, leaf_count, _, _ = tree_shape(n_real, b_f)
    lo, span = 0, leaf_count
    total = 1
    while span > 1:
        child_span = span // b_f
        counts = [
            max(0, min(n_real, lo + (i + 1) * child_span) - (lo + i * child_span))
            for i in range(b_f)
        ]
        total += sum(1 for c in counts if c > 0) - 1
        pick = int(np.argmax(counts))
        lo += pick * child_span
        span = child_span
    return total


def token_fraction(n_context: int, b_f: int = 2) -> float:
    """Percentage of context tokens attended per query, |S| / N * 100."""
    return 100.0 * selected_count(n_context, b_f) / n_context
