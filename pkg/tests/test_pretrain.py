import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from meshmae import autodiff as ad
from meshmae.autodiff import Tensor
from meshmae.optim import AdamW
from meshmae.patchify import MaskPartition, make_mask
from meshmae.pretrain import (
    NonFiniteLossError, PretrainBatch, PretrainConfig, chamfer_l2, chamfer_tokens,
    dump_diagnostics, evaluate_loss, export_reconstruction, face_mse, pretrain,
    reconstruct, reconstruction_error, total_loss, train_step,
)
from meshmae.transformer import MeshMAE, desk_config


def chamfer_loop(p, t):
    """Double loop over both sets, no vectorization."""
    a = sum(min(sum((x - y) ** 2 for x, y in zip(pi, tj)) for tj in t) for pi in p) / len(p)
    b = sum(min(sum((x - y) ** 2 for x, y in zip(pi, tj)) for pi in p) for tj in t) / len(t)
    return a + b


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 20), st.integers(1, 20), st.integers(0, 2**31))
def test_chamfer_matches_loop(n, m, seed):
    rng = np.random.default_rng(seed)
    p, t = rng.normal(size=(n, 3)), rng.normal(size=(m, 3))
    assert chamfer_l2(p, t) == pytest.approx(chamfer_loop(p.tolist(), t.tolist()), abs=1e-12)


def test_chamfer_properties():
    rng = np.random.default_rng(0)
    p, t = rng.normal(size=(45, 3)), rng.normal(size=(45, 3))
    assert chamfer_l2(p, p) == 0.0
    assert chamfer_l2(p, t) == pytest.approx(chamfer_l2(t, p))
    assert chamfer_l2(p, t) == pytest.approx(chamfer_l2(p[::-1], t[rng.permutation(45)]))
    # squared distances: a single pair at distance 2 gives 4 + 4
    assert chamfer_l2([[0, 0, 0]], [[2, 0, 0]]) == pytest.approx(8.0)
    with pytest.raises(ValueError):
        chamfer_l2(np.empty((0, 3)), t)


def test_chamfer_tokens_match_numpy():
    rng = np.random.default_rng(1)
    pred, tgt = rng.normal(size=(4, 45, 3)), rng.normal(size=(4, 45, 3))
    out = chamfer_tokens(Tensor(pred), tgt).data
    assert np.allclose(out, [chamfer_l2(p, t) for p, t in zip(pred, tgt)])


def test_face_mse():
    assert face_mse(np.zeros((2, 3)), np.ones((2, 3))) == 1.0
    with pytest.raises(ValueError):
        face_mse(np.zeros(3), np.zeros(4))


def test_total_loss_reads_masked_rows_only(sample):
    p = sample.patches
    g = len(p)
    mask = make_mask(g, 0.5, 0)
    rng = np.random.default_rng(2)
    pv, pf = rng.normal(size=(g, 45, 3)), rng.normal(size=(g, 64, 10))
    a = total_loss(Tensor(pv), Tensor(pf), p, mask, 0.5)
    vis = mask.visible_indices
    pv[vis] += 10
    pf[vis] -= 10
    b = total_loss(Tensor(pv), Tensor(pf), p, mask, 0.5)
    assert a.total.item() == b.total.item()
    msk = mask.masked_indices
    cds = [chamfer_l2(pv[i], p.relative_vertices[i]) for i in msk]
    mses = [face_mse(pf[i], p.features[i]) for i in msk]
    assert a.total.item() == pytest.approx(np.mean(mses) + 0.5 * np.mean(cds))


def test_empty_mask_warns(sample):
    g = len(sample.patches)
    mask = MaskPartition(np.array([], int), np.arange(g), 0.0)
    with pytest.warns(RuntimeWarning):
        out = total_loss(Tensor(np.zeros((g, 45, 3))), Tensor(np.zeros((g, 64, 10))),
                         sample.patches, mask)
    assert out.total.item() == 0.0


def test_batch_validation(sample):
    g = len(sample.patches)
    with pytest.raises(ValueError):
        PretrainBatch(sample.patches, make_mask(g - 1, 0.5, 0))
    bad = MaskPartition(np.arange(3), np.arange(3, g), 0.5)
    with pytest.raises(ValueError):
        PretrainBatch(sample.patches, bad)


def test_config_validation():
    for kw in ({"mask_ratio": 0.0}, {"mask_ratio": 1.0}, {"lr": -1}, {"batch_size": 0},
               {"max_steps": 0}):
        with pytest.raises(ValueError):
            PretrainConfig(**kw)
    assert PretrainConfig(batch_size=3, epochs=2).horizon(7) == 6
    assert PretrainConfig(batch_size=3, epochs=2, max_steps=4).horizon(7) == 4


def test_pretrain_deterministic_and_logged(tmp_path, samples):
    cfg = PretrainConfig(lr=1e-3, batch_size=2, epochs=1, seed=3)
    runs = []
    for i in range(2):
        m = MeshMAE(desk_config(), seed=0)
        res = pretrain(m, samples, cfg, log_path=tmp_path / f"log{i}.csv")
        runs.append((res.losses, m.state_dict()))
    assert runs[0][0] == runs[1][0]
    for k in runs[0][1]:
        assert np.array_equal(runs[0][1][k], runs[1][1][k])
    rows = list(csv.DictReader(open(tmp_path / "log0.csv")))
    assert list(rows[0]) == ["step", "lr", "loss", "chamfer", "mse"]
    assert [int(r["step"]) for r in rows] == [0, 1]
    assert float(rows[0]["lr"]) == pytest.approx(1e-3)


def test_training_reduces_loss(samples):
    m = MeshMAE(desk_config(), seed=0)
    m.encoder.ensure_feature_stats(samples[:2])
    before = evaluate_loss(m, samples[:2]).loss
    pretrain(m, samples[:2], PretrainConfig(lr=2e-3, batch_size=2, max_steps=25, epochs=100))
    assert evaluate_loss(m, samples[:2]).loss < 0.95 * before


def test_nonfinite_loss_raises(tmp_path, sample):
    m = MeshMAE(desk_config(), seed=0)
    m.face_head.bias.data[:] = np.nan
    opt = AdamW(m.parameters())
    batch = [PretrainBatch(sample.patches, make_mask(len(sample.patches), 0.5, 0), "x")]
    with pytest.raises(NonFiniteLossError) as info:
        train_step(m, opt, batch)
    assert info.value.diagnostics["failing_mesh"] == "x"
    assert "face_head.bias" in info.value.diagnostics["nonfinite_parameters"]
    path = dump_diagnostics(info.value, tmp_path / "diag.json")
    assert json.loads(path.read_text())["step"] == 0


def test_reconstruction_outputs(tmp_path, sample):
    m = MeshMAE(desk_config(), seed=0)
    rec = export_reconstruction(m, sample, tmp_path, ratio=0.7, seed=1, name="s")
    k = len(rec.mask.masked_indices)
    assert rec.predicted.shape == rec.ground_truth.shape == (k, 45, 3)
    assert rec.mean_chamfer == pytest.approx(np.mean(
        [chamfer_l2(p, t) for p, t in zip(rec.predicted, rec.ground_truth)]))
    for suffix in ("_pred.obj", "_gt.obj", "_visible.obj", ".json"):
        assert (tmp_path / f"s_r0.7{suffix}").exists()
    again = reconstruct(m, sample, 0.7, 1)
    assert again.mean_chamfer == rec.mean_chamfer
    assert reconstruction_error(m, [sample], 0.5, 0) > 0


def test_face_targets_follow_input_standardization(sample):
    m = MeshMAE(desk_config(), seed=0)
    m.encoder.ensure_feature_stats([sample])
    mask = make_mask(len(sample.patches), 0.5, 1)
    with ad.no_grad():
        _, verts, faces = m(sample.patches, mask)
    msk = mask.masked_indices
    target = (sample.patches.features[msk] - m.encoder.feature_mean.data) / m.encoder.feature_std.data
    expect = ((faces.data[msk] - target) ** 2).reshape(len(msk), -1).mean(axis=1).mean()
    assert evaluate_loss(m, [sample], seed=1).mse == pytest.approx(expect, rel=1e-4)
