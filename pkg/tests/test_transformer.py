import numpy as np
import pytest

from meshmae import autodiff as ad
from meshmae.autodiff import Tensor, grad_check
from meshmae.nn import Linear, trunc_normal
from meshmae.patchify import make_mask
from meshmae.transformer import (
    POS_STRATEGIES, Attention, Block, MeshMAE, desk_config, expected_parameter_count,
    paper_config, resolve_strategy,
)


def test_trunc_normal():
    w = trunc_normal(np.random.default_rng(0), (200, 200))
    assert np.abs(w).max() <= 0.04
    assert w.std() == pytest.approx(0.02 * 0.88, rel=0.05)


@pytest.mark.parametrize("strategy", POS_STRATEGIES)
def test_parameter_count(strategy):
    cfg = desk_config(pos_strategy=strategy)
    assert MeshMAE(cfg).num_parameters() == expected_parameter_count(cfg)
    wide = desk_config(pos_strategy=strategy, decoder_dim=64, decoder_heads=2)
    assert MeshMAE(wide).num_parameters() == expected_parameter_count(wide)


def test_paper_config_count():
    # closed form only; the model is not built
    cfg = paper_config()
    assert cfg.embed_dim == 768 and cfg.encoder_layers == 12
    assert expected_parameter_count(cfg) > 80_000_000


def test_attention_against_numpy():
    rng = np.random.default_rng(0)
    att = Attention(8, 2, rng).astype(np.float64)
    x = rng.normal(size=(5, 8))
    qkv = x @ att.qkv.weight.data + att.qkv.bias.data
    q, k, v = np.split(qkv, 3, axis=1)
    heads = []
    for h in range(2):
        sl = slice(4 * h, 4 * h + 4)
        s = q[:, sl] @ k[:, sl].T / 2.0
        p = np.exp(s - s.max(1, keepdims=True))
        p /= p.sum(1, keepdims=True)
        heads.append(p @ v[:, sl])
    expect = np.concatenate(heads, 1) @ att.proj.weight.data + att.proj.bias.data
    assert np.allclose(att(Tensor(x)).data, expect)


def test_block_gradients():
    rng = np.random.default_rng(1)
    blk = Block(128, 4, 4.0, rng)
    # larger weights than the 0.02 init so attention is far from uniform
    for p in blk.parameters():
        p.data = p.data * 10 if p.ndim == 2 else p.data + rng.normal(0, 0.1, p.shape)
    x = Tensor(rng.normal(size=(6, 128)), requires_grad=True)
    w = rng.normal(size=(6, 128))
    params = dict(blk.named_parameters())
    params["x"] = x
    # the key bias has an exactly zero gradient (softmax ignores a shift shared
    # by all keys); the floor keeps round-off there from counting as error
    rep = grad_check(lambda: (blk(x) * w).sum(), params, step=1e-5, tolerance=1e-3,
                     floor=1e-4, max_coords=12)
    assert rep.passed, rep.max_rel_error


@pytest.mark.parametrize("strategy", POS_STRATEGIES)
def test_forward_shapes(sample, strategy):
    m = MeshMAE(desk_config(pos_strategy=strategy), seed=0)
    g = len(sample.patches)
    mask = make_mask(g, 0.5, 0)
    enc, verts, faces = m(sample.patches, mask)
    assert enc.shape == (len(mask.visible_indices), 128)
    assert verts.shape == (g, 45, 3) and faces.shape == (g, 64, 10)


def test_learnable_table_overflow(sample):
    m = MeshMAE(desk_config(pos_strategy="a", max_tokens=8), seed=0)
    with pytest.raises(ValueError):
        m.encoder(sample.patches)


def test_resolve_strategy():
    assert resolve_strategy("d") == "d_patch_center"
    with pytest.raises(ValueError):
        resolve_strategy("e")


def test_mask_leak_freedom(sample):
    m = MeshMAE(desk_config(), seed=0)
    mask = make_mask(len(sample.patches), 0.5, 3)
    feats = sample.patches.features.copy()
    enc, _, _ = m(sample.patches, mask, features=feats)
    hit = mask.masked_indices[0]
    feats[hit] += 5.0
    enc2, _, _ = m(sample.patches, mask, features=feats)
    assert np.array_equal(enc.data, enc2.data)


def test_positional_mlp_shared_between_encoder_and_decoder():
    m = MeshMAE(desk_config(), seed=0)
    names = [n for n, _ in m.named_parameters() if "pos" in n]
    assert all(n.startswith("encoder.pos_embed") for n in names)


def test_same_seed_same_weights():
    a, b = MeshMAE(desk_config(), seed=5), MeshMAE(desk_config(), seed=5)
    for (n, p), (_, q) in zip(a.named_parameters(), b.named_parameters()):
        assert np.array_equal(p.data, q.data), n


def test_linear_zero_bias():
    lin = Linear(3, 2, np.random.default_rng(0))
    assert np.array_equal(lin.bias.data, np.zeros(2))
    out = lin(Tensor(np.zeros((1, 3), np.float32)))
    assert np.array_equal(out.data, np.zeros((1, 2)))


def test_state_dict_roundtrip_and_errors():
    a, b = MeshMAE(desk_config(), seed=1), MeshMAE(desk_config(), seed=2)
    b.load_state_dict(a.state_dict())
    assert all(np.array_equal(p.data, q.data) for p, q in zip(a.parameters(), b.parameters()))
    state = a.state_dict()
    state.pop("mask_token")
    with pytest.raises(KeyError):
        b.load_state_dict(state)
    bad = a.state_dict()
    bad["mask_token"] = np.zeros((2, 128))
    with pytest.raises(ValueError):
        b.load_state_dict(bad)


def test_feature_standardization(samples):
    m = MeshMAE(desk_config(), seed=0)
    enc = m.encoder
    raw = samples[0].patches.features
    assert not enc.stats_fitted
    assert np.allclose(enc.standardize(raw), raw, atol=1e-6)
    enc.ensure_feature_stats(samples)
    rows = np.concatenate([enc.standardize(s.patches.features).reshape(-1, 10) for s in samples])
    assert np.allclose(rows.mean(axis=0), 0.0, atol=1e-4)
    assert np.allclose(rows.std(axis=0), 1.0, atol=1e-3)
    # already fitted: a different sample set leaves the statistics alone
    mean = enc.feature_mean.data.copy()
    enc.ensure_feature_stats(samples[:1])
    assert np.array_equal(enc.feature_mean.data, mean)
    off = MeshMAE(desk_config(standardize_features=False), seed=0).encoder
    off.ensure_feature_stats(samples)
    assert not off.stats_fitted
    assert np.array_equal(off.standardize(raw), raw)


def test_buffers_are_state_but_not_parameters(samples):
    m = MeshMAE(desk_config(), seed=0)
    m.encoder.ensure_feature_stats(samples)
    state = m.state_dict()
    assert "encoder.feature_mean" in state
    assert all("feature_" not in n for n, _ in m.named_parameters())
    assert m.num_parameters() == expected_parameter_count(desk_config())
    fresh = MeshMAE(desk_config(), seed=1)
    fresh.load_state_dict(state)
    assert fresh.encoder.stats_fitted
    assert np.array_equal(fresh.encoder.feature_std.data, m.encoder.feature_std.data)
    assert fresh.astype(np.float64).encoder.feature_mean.dtype == np.float64
