"""Task generators: palindrome structure, GP sampling, eval metrics."""

from __future__ import annotations

import numpy as np
import pytest

from retreever.engine import Array
from retreever.errors import ConfigError
from retreever.models import Prediction, SCALE_FLOOR
from retreever.tasks import (
    BOS_ID,
    EOS_ID,
    copy_batch_record,
    dump_jsonl,
    eval_accuracy,
    eval_loglik,
    gen_copy_batch,
    gen_gp_batch,
    gp_batch_record,
    load_jsonl,
    matern52_kernel,
    rbf_kernel,
)


# ---------------------------------------------------------------------------
# copy task


def test_copy_k3_worked_example():
    batch = gen_copy_batch(3, 1, np.random.default_rng(0))
    ids, t = batch.context_ids[0], batch.targets[0]
    assert ids.shape == (4,) and t.shape == (4,)
    assert ids[0] == BOS_ID and t[-1] == EOS_ID
    digits = ids[1:]
    assert np.all((digits >= 0) & (digits <= 9))
    assert np.array_equal(t[:3], digits[::-1])  # mirrored second half
    assert np.array_equal(batch.context_positions, [1, 2, 3, 4])
    assert np.array_equal(batch.query_positions, [5, 6, 7, 8])


def test_copy_mirror_property_thousand_draws():
    """For every drawn sequence, the symbol at position 2^k - i equals the
    symbol at position i + 1 (1-based), for all 0 < i <= 2^(k-1)."""
    rng = np.random.default_rng(1)
    checked = 0
    for _ in range(250):
        k = int(rng.integers(2, 7))
        batch = gen_copy_batch(k, 4, rng)
        n = 2**k
        seq = np.concatenate([batch.context_ids, batch.targets], axis=1)
        assert seq.shape == (4, n)
        for i in range(1, n // 2 + 1):
            assert np.array_equal(seq[:, n - i - 1], seq[:, i])
        assert np.all(seq[:, 0] == BOS_ID)
        assert np.all(seq[:, -1] == EOS_ID)
        assert np.all((seq[:, 1:-1] >= 0) & (seq[:, 1:-1] <= 9))
        checked += 4
    assert checked == 1000


def test_copy_batch_deterministic_per_seed():
    a = gen_copy_batch(4, 3, np.random.default_rng(7))
    b = gen_copy_batch(4, 3, np.random.default_rng(7))
    c = gen_copy_batch(4, 3, np.random.default_rng(8))
    assert np.array_equal(a.context_ids, b.context_ids)
    assert np.array_equal(a.targets, b.targets)
    assert not np.array_equal(a.context_ids, c.context_ids)


def test_copy_rejects_tiny_k():
    with pytest.raises(ConfigError):
        gen_copy_batch(1, 2, np.random.default_rng(0))


# ---------------------------------------------------------------------------
# GP kernels and sampling


def test_rbf_closed_form():
    x1 = np.array([[[0.0]]])
    x2 = np.array([[[1.0]]])
    l = np.array([1.0])
    sf = np.array([0.5])
    got = rbf_kernel(x1, x2, l, sf)[0, 0, 0]
    assert abs(got - 0.25 * np.exp(-0.5)) < 1e-15
    # lengthscale enters squared: r=2, l=2 matches r=1, l=1
    same = rbf_kernel(np.array([[[0.0]]]), np.array([[[2.0]]]), 2 * l, sf)
    assert abs(same[0, 0, 0] - got) < 1e-15


def test_matern52_closed_form():
    r, l, sf = 0.7, 1.3, 0.9
    a = np.sqrt(5.0) * r / l
    want = sf**2 * (1.0 + a + a**2 / 3.0) * np.exp(-a)
    got = matern52_kernel(
        np.array([[[0.0]]]), np.array([[[r]]]), np.array([l]), np.array([sf])
    )[0, 0, 0]
    assert abs(got - want) < 1e-15


@pytest.mark.parametrize("kernel", [rbf_kernel, matern52_kernel])
def test_kernel_matrix_properties(kernel):
    rng = np.random.default_rng(2)
    x = rng.uniform(-2, 2, size=(3, 6, 1))
    l = rng.uniform(0.6, 1.0, 3)
    sf = rng.uniform(0.1, 1.0, 3)
    K = kernel(x, x, l, sf)
    assert np.allclose(K, np.swapaxes(K, 1, 2), atol=1e-12)  # symmetric
    for b in range(3):
        assert np.allclose(np.diag(K[b]), sf[b] ** 2, atol=1e-12)
        assert np.linalg.eigvalsh(K[b]).min() > -1e-9  # PSD up to round-off


def test_gp_batch_shapes_and_ranges():
    rng = np.random.default_rng(3)
    for _ in range(300):
        batch = gen_gp_batch("rbf", 2, rng)
        n, m = batch.x_context.shape[1], batch.x_target.shape[1]
        assert 3 <= n < 47
        assert 3 <= m < 50 - n
        assert batch.y_context.shape == (2, n, 1)
        assert batch.y_target.shape == (2, m, 1)
        assert np.all((batch.x_context >= -2) & (batch.x_context <= 2))
        assert np.all((batch.lengthscale >= 0.6) & (batch.lengthscale < 1.0))
        assert np.all((batch.sigma_f >= 0.1) & (batch.sigma_f < 1.0))
    assert batch.context.shape == (2, n, 2)  # (x, y) feature pairs


@pytest.mark.parametrize("family,kernel", [("rbf", rbf_kernel), ("matern52", matern52_kernel)])
def test_gp_samples_match_kernel_covariance(family, kernel):
    """Whiten each draw by the Cholesky of its own kernel matrix; the result
    must be standard normal (marginals and cross-correlations) within
    Monte-Carlo error."""
    rng = np.random.default_rng(4)
    B = 20000
    batch = gen_gp_batch(family, B, rng, n_context=2, n_target=1)
    x = np.concatenate([batch.x_context, batch.x_target], axis=1)
    y = np.concatenate([batch.y_context, batch.y_target], axis=1)[..., 0]
    K = kernel(x, x, batch.lengthscale, batch.sigma_f)
    K += 1e-6 * np.eye(3)[None]
    chol = np.linalg.cholesky(K)
    z = np.linalg.solve(chol, y[..., None])[..., 0]  # (B, 3)
    assert np.abs(z.mean(axis=0)).max() < 0.02
    assert np.abs(z.var(axis=0) - 1.0).max() < 0.02
    corr = np.corrcoef(z.T)
    off = corr[~np.eye(3, dtype=bool)]
    assert np.abs(off).max() < 0.02


def test_gp_family_validation():
    with pytest.raises(ConfigError):
        gen_gp_batch("periodic", 2, np.random.default_rng(0))


def test_gp_batch_deterministic_per_seed():
    a = gen_gp_batch("rbf", 2, np.random.default_rng(11))
    b = gen_gp_batch("rbf", 2, np.random.default_rng(11))
    assert np.array_equal(a.x_context, b.x_context)
    assert np.array_equal(a.y_target, b.y_target)


# ---------------------------------------------------------------------------
# metrics


def test_eval_accuracy_counts_argmax_matches():
    logits = np.zeros((1, 4, 3))
    logits[0, 0, 1] = 2.0
    logits[0, 1, 2] = 2.0
    logits[0, 2, 0] = 2.0
    # row 3 is uniform: ties break toward the lowest class (argmax)
    targets = np.array([[1, 2, 1, 0]])
    assert eval_accuracy(logits, targets) == 0.75
    wrapped = Prediction(logits=Array(logits))
    assert eval_accuracy(wrapped, targets) == 0.75


def test_random_logits_score_near_uniform_baseline():
    """Unstructured guessing over the 12-way vocabulary lands at 1/12."""
    rng = np.random.default_rng(22)
    logits = rng.standard_normal((200, 100, 12))
    targets = rng.integers(0, 10, size=(200, 100))
    acc = eval_accuracy(logits, targets)
    assert abs(acc - 1.0 / 12.0) < 0.01


def test_eval_loglik_unit_gaussian():
    targets = np.zeros((2, 3, 1))
    pre = np.log(np.expm1(1.0 - SCALE_FLOOR))
    pred = Prediction(
        mean=Array(np.zeros((2, 3, 1))),
        pre_scale=Array(np.full((2, 3, 1), pre)),
    )
    want = -0.5 * np.log(2.0 * np.pi)
    assert abs(eval_loglik(pred, targets) - want) < 1e-9


# ---------------------------------------------------------------------------
# dataset dumps


def test_jsonl_roundtrip(tmp_path):
    rng = np.random.default_rng(5)
    records = [
        copy_batch_record(gen_copy_batch(3, 2, rng), split="train", seed=5),
        gp_batch_record(gen_gp_batch("rbf", 2, rng, 4, 3), split="eval", seed=5),
    ]
    path = tmp_path / "data.jsonl"
    dump_jsonl(path, records)
    loaded = load_jsonl(path)
    assert len(loaded) == 2
    assert loaded[0]["kind"] == "copy" and loaded[0]["split"] == "train"
    assert np.array_equal(loaded[0]["context_ids"], records[0]["context_ids"])
    assert loaded[1]["kind"] == "gp" and loaded[1]["family"] == "rbf"
    assert np.allclose(loaded[1]["y_context"], records[1]["y_context"])
