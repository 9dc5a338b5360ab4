"""Shared randomized property suites for tree retrieval.

Plain asserting functions, imported by both the unit tests and the
acceptance suite (which runs them at the full advertised case counts).
"""

from __future__ import annotations

import numpy as np

from retreever import engine
from retreever.attention import AttentionBlock
from retreever.engine import Array
from retreever.tca import (
    attend_selection,
    full_selection,
    retrieve_batch,
    RetrievalPolicy,
)
from retreever.tree import aggregate, build_tree

D, HEADS = 8, 2


def make_blocks(seed: int = 0):
    """One (aggregator, cross-attention, policy) trio reused across cases."""
    rng = np.random.default_rng(seed)
    agg = AttentionBlock(D, HEADS, rng, cross=False, dtype=np.float64)
    ca = AttentionBlock(D, HEADS, rng, cross=True, dtype=np.float64)
    policy = RetrievalPolicy(D, ca=ca, share_projections=True)
    return agg, ca, policy


def subtree_real_leaves(tree, node: int) -> list[int]:
    out, stack = [], [node]
    while stack:
        v = stack.pop()
        if v >= tree.leaf_start:
            if tree.node_real[v]:
                out.append(v)
        else:
            stack.extend(tree.b_f * v + 1 + j for j in range(tree.b_f))
    return out


def check_selection(tree, sel, b: int, m: int) -> None:
    """Partition, cardinality, entropy, and probability-mass invariants for
    one query's selection."""
    b_f = tree.b_f
    valid = sel.s_valid[b, m]
    nodes = sel.s_idx[b, m][valid]

    # cardinality law along the visited path: |S| = 1 + sum(|C_v| - 1)
    expect, cur = 1, 0
    for t in range(tree.height):
        kids = b_f * cur + 1 + np.arange(b_f)
        expect += int(tree.node_real[kids].sum()) - 1
        cur = int(kids[sel.actions[b, m, t]])
    assert valid.sum() == expect, (valid.sum(), expect)

    # terminal entry is a real leaf
    leaf = int(sel.s_idx[b, m, -1])
    assert leaf == cur
    assert leaf >= tree.leaf_start and tree.node_real[leaf]

    # subtrees rooted at S partition the real leaves exactly
    covered: list[int] = []
    for node in nodes:
        covered.extend(subtree_real_leaves(tree, int(node)))
    assert len(covered) == len(set(covered)), "overlapping subtrees"
    assert sorted(covered) == list(tree.leaf_nodes_real), "coverage gap"

    # entropy within [0, ln b_f]; log-prob of the chosen action consistent
    ent = sel.entropy.data[b, m]
    assert np.all(ent >= -1e-9) and np.all(ent <= np.log(b_f) + 1e-9), ent
    for t, p in enumerate(sel.probs):
        row = p[b, m]
        assert abs(row.sum() - 1.0) < 1e-9
        kids = b_f * _visited(tree, sel, b, m, t) + 1 + np.arange(b_f)
        assert np.all(row[~tree.node_real[kids]] == 0.0), "padded child mass"
        a = sel.actions[b, m, t]
        assert abs(sel.logp.data[b, m, t] - np.log(row[a])) < 1e-9
        nz = row[row > 0]
        assert abs(ent[t] - (-(nz * np.log(nz)).sum())) < 1e-9


def _visited(tree, sel, b: int, m: int, t: int) -> int:
    cur = 0
    for s in range(t):
        cur = tree.b_f * cur + 1 + int(sel.actions[b, m, s])
    return cur


def run_structural_suite(n_cases: int, seed: int = 0) -> int:
    """Partition + cardinality + entropy + probability invariants on random
    trees; returns the number of cases exercised."""
    agg, _, policy = make_blocks(seed)
    rng = np.random.default_rng(seed + 1)
    for case in range(n_cases):
        n = int(rng.integers(1, 49))
        b_f = int(rng.integers(2, 5))
        B = int(rng.integers(1, 3))
        M = int(rng.integers(1, 4))
        tokens = Array(rng.standard_normal((B, n, D)))
        tree = aggregate(build_tree(tokens, b_f=b_f), agg)
        queries = Array(rng.standard_normal((B, M, D)))
        mode = "sample" if case % 2 == 0 else "argmax"
        sel = retrieve_batch(
            tree, queries, policy, mode=mode, rng=rng, record_probs=True
        )
        for b in range(B):
            for m in range(M):
                check_selection(tree, sel, b, m)
    return n_cases


def run_padding_invariance(n_cases: int, seed: int = 0, atol: float = 1e-6) -> int:
    """Scribbling garbage into padded leaf slots must not change retrieval
    decisions or attention outputs."""
    agg, ca, policy = make_blocks(seed)
    rng = np.random.default_rng(seed + 2)
    for case in range(n_cases):
        n = int(rng.integers(2, 30))
        b_f = int(rng.integers(2, 4))
        tokens = Array(rng.standard_normal((1, n, D)))
        queries = Array(rng.standard_normal((1, 2, D)))

        t1 = aggregate(build_tree(tokens, b_f=b_f), agg)
        t2 = build_tree(tokens, b_f=b_f)
        lv = engine.gather_rows(t2.tokens, t2.leaf_perm).data.copy()
        pad = ~t2.node_real[t2.leaf_start :]
        lv[:, pad] = rng.normal(scale=100.0, size=lv[:, pad].shape)
        aggregate(t2, agg, leaf_values=Array(lv))

        s1 = retrieve_batch(t1, queries, policy, mode="sample",
                            rng=np.random.default_rng(1000 + case))
        s2 = retrieve_batch(t2, queries, policy, mode="sample",
                            rng=np.random.default_rng(1000 + case))
        assert np.array_equal(s1.actions, s2.actions)
        assert np.array_equal(s1.s_idx, s2.s_idx)
        assert np.allclose(s1.logp.data, s2.logp.data, atol=atol)
        o1 = attend_selection(t1, queries, s1, ca).data
        o2 = attend_selection(t2, queries, s2, ca).data
        assert np.allclose(o1, o2, atol=atol)
    return n_cases


def run_reinforce_oracle(episodes: int, seed: int = 0):
    """Monte-Carlo REINFORCE gradient vs. the exhaustively enumerated
    gradient of expected return on a 4-leaf tree with fixed leaf rewards.

    All ``episodes`` run as parallel queries of one batched retrieval, so a
    single backward pass yields the episode-averaged estimator. Returns
    (max relative error across components, parameter count checked).
    """
    from retreever.training import reinforce_loss

    rng = np.random.default_rng(seed)
    agg = AttentionBlock(D, HEADS, rng, cross=False, dtype=np.float64)
    policy = RetrievalPolicy(D, rng=rng, share_projections=False, dtype=np.float64)
    tokens = Array(rng.standard_normal((1, 4, D)))
    tree = aggregate(build_tree(tokens), agg)
    q_one = rng.standard_normal((1, 1, D))
    leaf_reward = {3: 1.3, 4: 0.4, 5: 2.0, 6: 0.7}
    params = policy.params()

    # Monte Carlo: sample every episode in lockstep, reward the terminal leaf
    q_mc = Array(np.repeat(q_one, episodes, axis=1))
    with engine.Tape() as tape:
        sel = retrieve_batch(
            tree, q_mc, policy, mode="sample", rng=np.random.default_rng(seed + 1)
        )
        rewards = np.vectorize(leaf_reward.get)(sel.s_idx[:, :, -1]).astype(float)
        loss = reinforce_loss(sel, rewards, alpha=0.0)
    tape.backward(loss)
    grads_mc = [tape.grad(p) for p in params]

    # exact: enumerate all four root-to-leaf paths
    def node_probs(tape_q, node):
        child_h = Array(tree.h.data[:, None, [2 * node + 1, 2 * node + 2]])
        logits = policy.score(tape_q, child_h)
        return engine.reshape(engine.exp(engine.log_softmax(logits)), (2,))

    with engine.Tape() as tape:
        qa = Array(q_one)
        p_root = node_probs(qa, 0)
        expected = Array(np.zeros(()))
        for a, node in enumerate((1, 2)):
            p_child = node_probs(qa, node)
            r = Array(
                np.array(
                    [leaf_reward[2 * node + 1], leaf_reward[2 * node + 2]]
                )
            )
            branch = engine.reduce_sum(p_child * r)
            pick = engine.reduce_sum(p_root * Array(np.eye(2)[a]))
            expected = expected + pick * branch
        neg_return = engine.neg(expected)
    tape.backward(neg_return)
    grads_exact = [tape.grad(p) for p in params]

    scale = max(np.abs(g).max() for g in grads_exact)
    rel = max(
        np.abs(gm - ge).max() / scale for gm, ge in zip(grads_mc, grads_exact)
    )
    n_components = sum(g.size for g in grads_exact)
    return rel, n_components


def run_full_equivalence(n_cases: int, seed: int = 0, atol: float = 1e-6) -> int:
    """Selecting every real leaf must equal plain cross attention over the
    (ordered, real) leaf embeddings."""
    agg, ca, _ = make_blocks(seed)
    rng = np.random.default_rng(seed + 3)
    for case in range(n_cases):
        n = int(rng.integers(1, 40))
        b_f = int(rng.integers(2, 4))
        B = int(rng.integers(1, 3))
        M = int(rng.integers(1, 4))
        tokens = Array(rng.standard_normal((B, n, D)))
        tree = aggregate(build_tree(tokens, b_f=b_f), agg)
        queries = Array(rng.standard_normal((B, M, D)))
        sel = full_selection(tree)
        assert np.all(sel.tokens_per_query == n)
        got = attend_selection(tree, queries, sel, ca).data
        leaves = engine.gather_rows(
            tree.h, np.broadcast_to(tree.leaf_nodes_real[None], (B, n))
        )
        want = ca.attend(queries, leaves).data
        assert np.allclose(got, want, atol=atol)
    return n_cases
