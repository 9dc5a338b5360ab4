"""Model variants: shapes, token accounting, and small-N equivalences."""

from __future__ import annotations

import numpy as np
import pytest

from retreever.engine import Array
from retreever.errors import ConfigError
from retreever.models import (
    ModelConfig,
    PerceiverIO,
    Prediction,
    ReTreever,
    ReTreeverFull,
    SCALE_FLOOR,
    TransformerCA,
    build_model,
    gaussian_scale_np,
)
from retreever import engine
from retreever.tasks import gen_copy_batch, gen_gp_batch


def copy_cfg(variant="retreever", k=3, **kw):
    kw.setdefault("encoder_depth", 1)
    kw.setdefault("d_model", 16)
    kw.setdefault("heads", 2)
    return ModelConfig(
        variant=variant,
        vocab_size=12,
        max_positions=2**k + 1,
        **kw,
    )


def gp_cfg(variant="retreever", **kw):
    kw.setdefault("encoder_depth", 1)
    kw.setdefault("d_model", 16)
    kw.setdefault("heads", 2)
    return ModelConfig(
        variant=variant,
        head="gaussian",
        context_features=2,
        query_features=1,
        **kw,
    )


def test_build_model_dispatch():
    rng = np.random.default_rng(0)
    pairs = [
        ("retreever", ReTreever),
        ("retreever_full", ReTreeverFull),
        ("transformer_ca", TransformerCA),
        ("perceiver", PerceiverIO),
    ]
    for variant, cls in pairs:
        assert isinstance(build_model(copy_cfg(variant), rng), cls)


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(variant="rnn", max_positions=4)
    with pytest.raises(ConfigError):
        ModelConfig(head="poisson", max_positions=4)
    with pytest.raises(ConfigError):
        ModelConfig(vocab_size=1, max_positions=4)
    with pytest.raises(ConfigError):
        ModelConfig(variant="perceiver", latents=0, max_positions=4)
    with pytest.raises(ConfigError):
        ModelConfig()  # neither id-token nor feature mode selected


@pytest.mark.parametrize(
    "variant", ["retreever", "retreever_full", "transformer_ca", "perceiver"]
)
def test_copy_forward_shapes(variant):
    rng = np.random.default_rng(1)
    model = build_model(copy_cfg(variant), rng, dtype=np.float64)
    batch = gen_copy_batch(3, 2, rng)
    pred, sel, leaves = model.forward(
        batch.context,
        batch.positions,
        batch.query_positions,
        mode="sample",
        rng=rng,
        want_leaves=True,
    )
    assert pred.logits.shape == (2, 4, 12)
    assert pred.mean is None
    if variant == "retreever":
        assert sel is not None
        assert leaves.logits.shape == (2, 4, 12)
        assert leaves.tokens_per_query == 4.0  # context half
    else:
        assert sel is None or variant == "retreever_full"


@pytest.mark.parametrize(
    "variant", ["retreever", "retreever_full", "transformer_ca", "perceiver"]
)
def test_gp_forward_shapes(variant):
    rng = np.random.default_rng(2)
    model = build_model(gp_cfg(variant), rng, dtype=np.float64)
    batch = gen_gp_batch("rbf", 3, rng, n_context=5, n_target=4)
    pred, _, _ = model.forward(
        batch.context, batch.positions, batch.x_target, mode="sample", rng=rng
    )
    assert pred.logits is None
    assert pred.mean.shape == (3, 4, 1)
    assert pred.pre_scale.shape == (3, 4, 1)
    assert np.all(pred.scale().data > 0)


def test_tokens_per_query_accounting():
    rng = np.random.default_rng(3)
    batch = gen_copy_batch(4, 2, rng)  # context = 8 tokens
    counts = {
        "retreever": 4.0,  # log2(8) + 1
        "retreever_full": 8.0,
        "transformer_ca": 8.0,
        "perceiver": 6.0,
    }
    for variant, want in counts.items():
        model = build_model(
            copy_cfg(variant, k=4, latents=6), np.random.default_rng(4)
        )
        pred, _, _ = model.forward(
            batch.context, batch.positions, batch.query_positions,
            mode="sample", rng=rng,
        )
        assert pred.tokens_per_query == want, variant


def test_retreever_two_token_context_equals_cross_attention():
    """With N=2 the selected set is always both leaves, so TCA must agree
    with plain cross attention over the encoded context."""
    rng = np.random.default_rng(5)
    cfg = gp_cfg("retreever")
    model = build_model(cfg, rng, dtype=np.float64)
    batch = gen_gp_batch("rbf", 2, rng, n_context=2, n_target=3)
    pred, sel, _ = model.forward(
        batch.context, batch.positions, batch.x_target, mode="sample", rng=rng
    )
    assert np.all(sel.tokens_per_query == 2)
    ctx, q = model._embed(batch.context, batch.x_target)
    enc = model.encoder(ctx)
    want = model._predict(model.ca.attend(q, enc), 2.0)
    assert np.allclose(pred.mean.data, want.mean.data, atol=1e-10)
    assert np.allclose(pred.pre_scale.data, want.pre_scale.data, atol=1e-10)


@pytest.mark.parametrize("n", [5, 8])
def test_full_mode_equals_cross_attention_over_encodings(n):
    """mode='full' (and ReTreeverFull) attend every real leaf, which with
    index ordering is exactly the encoded context."""
    rng = np.random.default_rng(6)
    model = build_model(gp_cfg("retreever"), rng, dtype=np.float64)
    batch = gen_gp_batch("rbf", 2, rng, n_context=n, n_target=3)
    pred, sel, _ = model.forward(
        batch.context, batch.positions, batch.x_target, mode="full"
    )
    assert np.all(sel.tokens_per_query == n)
    ctx, q = model._embed(batch.context, batch.x_target)
    enc = model.encoder(ctx)
    want = model.ca.attend(q, enc)
    got_feats = model.head_mean(want)
    assert np.allclose(pred.mean.data, got_feats.data, atol=1e-10)


def test_perceiver_latent_parameter():
    rng = np.random.default_rng(7)
    model = build_model(copy_cfg("perceiver", latents=5), rng)
    assert model.latents.data.shape == (5, 16)
    names = [n for n, _ in model.named_params()]
    assert "latents" in names
    batch = gen_copy_batch(3, 2, rng)
    pred, _, _ = model.forward(batch.context, batch.positions, batch.query_positions)
    assert pred.tokens_per_query == 5.0


def test_perceiver_depth_zero_ignores_context():
    """With no iterative-attention blocks the latents never read the
    context, so predictions depend on latent init and queries only."""
    rng = np.random.default_rng(21)
    model = build_model(
        copy_cfg("perceiver", encoder_depth=0, latents=4), rng, dtype=np.float64
    )
    batch = gen_copy_batch(3, 2, rng)
    base, _, _ = model.forward(batch.context, batch.positions, batch.query_positions)
    ids = (batch.context_ids + 3) % 10  # rewrites every context token
    assert np.all(ids != batch.context_ids)
    other, _, _ = model.forward(
        (ids, batch.context_positions), batch.positions, batch.query_positions
    )
    assert np.array_equal(base.logits.data, other.logits.data)


def test_shared_policy_adds_no_parameters():
    rng = np.random.default_rng(8)
    shared = build_model(copy_cfg("retreever"), np.random.default_rng(8))
    owned = build_model(
        copy_cfg("retreever", share_policy_projections=False),
        np.random.default_rng(8),
    )
    shared_names = [n for n, _ in shared.named_params()]
    owned_names = [n for n, _ in owned.named_params()]
    assert not any(n.startswith("policy.") for n in shared_names)
    assert any(n.startswith("policy.own_wq") for n in owned_names)
    assert len(owned_names) == len(shared_names) + 4  # two Linears


def test_build_is_seed_deterministic():
    cfg = copy_cfg("retreever")
    a = build_model(cfg, np.random.default_rng(11))
    b = build_model(cfg, np.random.default_rng(11))
    for (na, pa), (nb, pb) in zip(a.named_params(), b.named_params()):
        assert na == nb
        assert np.array_equal(pa.data, pb.data)


def test_state_roundtrip_transfers_outputs():
    rng = np.random.default_rng(12)
    cfg = gp_cfg("transformer_ca")
    src = build_model(cfg, np.random.default_rng(1), dtype=np.float64)
    dst = build_model(cfg, np.random.default_rng(2), dtype=np.float64)
    batch = gen_gp_batch("rbf", 1, rng, n_context=4, n_target=2)
    before = dst.forward(batch.context, batch.positions, batch.x_target)[0]
    dst.load_state(src.state())
    after = dst.forward(batch.context, batch.positions, batch.x_target)[0]
    want = src.forward(batch.context, batch.positions, batch.x_target)[0]
    assert not np.allclose(before.mean.data, want.mean.data)
    assert np.allclose(after.mean.data, want.mean.data, atol=1e-12)


def test_gaussian_scale_numpy_twin():
    rng = np.random.default_rng(13)
    x = rng.standard_normal(100) * 5
    want = engine.softplus(Array(x)).data + SCALE_FLOOR
    assert np.allclose(gaussian_scale_np(x), want, atol=1e-12)
    assert np.all(gaussian_scale_np(np.array([-50.0, 0.0, 50.0])) > 0)


def test_prediction_scale_positive():
    pre = Array(np.array([[-30.0], [0.0], [30.0]]))
    scale = Prediction(mean=pre, pre_scale=pre).scale().data
    assert np.all(scale >= SCALE_FLOOR)


def test_depth_zero_encoder_allowed():
    rng = np.random.default_rng(14)
    model = build_model(copy_cfg("retreever", encoder_depth=0), rng)
    assert model.encoder.depth == 0
    batch = gen_copy_batch(3, 1, rng)
    pred, _, _ = model.forward(
        batch.context, batch.positions, batch.query_positions,
        mode="sample", rng=rng,
    )
    assert pred.logits.shape == (1, 4, 12)
