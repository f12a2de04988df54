import pytest

from meshmae.config import ConfigError, RunConfig, from_dict, load_config


def write(tmp_path, text):
    p = tmp_path / "run.toml"
    p.write_text(text)
    return p


def test_defaults_and_presets():
    desk = load_config()
    paper = load_config(preset="paper")
    assert desk.model.embed_dim == 128 and desk.model.encoder_layers == 4
    assert paper.model.embed_dim == 768 and paper.model.encoder_layers == 12
    assert desk.pretrain.mask_ratio == 0.5 and desk.pretrain.lam == 0.5


def test_toml_overlay(tmp_path):
    p = write(tmp_path, "seed = 4\n[pretrain]\nmask_ratio = 0.75\n[model]\npos_strategy = 'a'\n"
                        "[aug]\nenable = true\n")
    cfg = load_config(p)
    assert cfg.seed == 4 and cfg.pretrain.mask_ratio == 0.75
    assert cfg.model.pos_strategy == "a_learnable" and cfg.aug.enable
    assert cfg.pretrain.lr == RunConfig().pretrain.lr


@pytest.mark.parametrize("text", [
    "[pretrian]\nlr = 1\n",
    "[pretrain]\nlearning_rate = 1\n",
    "[pretrain]\nmask_ratio = 1.5\n",
    "[finetune]\nface_order = 'sideways'\n",
    "[remesh]\nmin_faces = 300\nmax_faces = 200\n",
    "[model]\nembed_dim = 130\n",
    "seed = -1\n",
    "pretrain = 3\n",
    "[pretrain\n",
])
def test_rejects_bad_config(tmp_path, text):
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, text))


def test_digest_tracks_content():
    a, b = RunConfig(), RunConfig()
    assert a.digest() == b.digest()
    assert from_dict({"seed": 1}).digest() != a.digest()
    assert len(a.digest()) == 16


def test_remesh_config():
    cfg = from_dict({"remesh": {"min_faces": 100, "max_faces": 120}})
    rc = cfg.remesh_config(seed=9)
    assert (rc.min_faces, rc.max_faces, rc.seed) == (100, 120, 9)
