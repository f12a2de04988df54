import csv
import json

import pytest

from meshmae import cli
from meshmae.pretrain import NonFiniteLossError

FAST = """
[pretrain]
batch_size = 3
[finetune]
epochs = 1
batch_size = 4
[probe]
epochs = 5
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "fast.toml").write_text(FAST)
    assert cli.main(["synth", "--out", str(root / "raw"), "--per-class", "2",
                     "--test-fraction", "0.5", "--seed", "1"]) == 0
    assert cli.main(["preprocess", "--input", str(root / "raw"), "--out", str(root / "data"),
                     "--seed", "1"]) == 0
    return root


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_usage_errors(capsys, tmp_path):
    with pytest.raises(SystemExit) as e:
        cli.main([])
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        cli.main(["pretrain", "--data", "x", "--bogus"])
    assert e.value.code == 1
    assert run("synth", "--per-class", "1") == 1  # no --out
    bad = tmp_path / "bad.toml"
    bad.write_text("[pretrain]\nmask_ratio = 2\n")
    assert run("synth", "--config", bad, "--out", tmp_path / "s") == 1


def test_data_errors(tmp_path):
    assert run("pretrain", "--data", tmp_path / "missing", "--out", tmp_path / "m.ckpt") == 2
    assert run("preprocess", "--input", tmp_path / "missing", "--out", tmp_path / "o") == 2
    (tmp_path / "empty").mkdir()
    assert run("preprocess", "--input", tmp_path / "empty", "--out", tmp_path / "o") == 2
    broken = tmp_path / "broken" / "train" / "x"
    broken.mkdir(parents=True)
    (broken / "a.obj").write_text("v 0 0\n")
    assert run("preprocess", "--input", tmp_path / "broken", "--out", tmp_path / "o2") == 2
    manifest = json.loads((tmp_path / "o2" / "manifest.json").read_text())
    assert manifest["failed"][0]["source"].endswith("a.obj")


def test_preprocess_outputs(workspace):
    manifest = json.loads((workspace / "data" / "manifest.json").read_text())
    assert len(manifest["meshes"]) == 6 and not manifest["failed"]
    assert {m["split"] for m in manifest["meshes"]} == {"train", "test"}
    assert all(96 <= m["patches"] <= 256 for m in manifest["meshes"])
    run_info = json.loads((workspace / "data" / "run.json").read_text())
    assert run_info["seed"] == 1 and len(run_info["config_hash"]) == 16


def test_preprocess_deterministic(workspace, tmp_path):
    assert run("preprocess", "--input", workspace / "raw", "--out", tmp_path / "again",
               "--seed", "1") == 0
    for m in json.loads((workspace / "data" / "manifest.json").read_text())["meshes"]:
        a = (workspace / "data" / m["path"]).read_bytes()
        assert a == (tmp_path / "again" / m["path"]).read_bytes()


def test_pretrain_deterministic(workspace, tmp_path):
    outs = []
    for i in range(2):
        out = tmp_path / f"m{i}.ckpt"
        assert run("pretrain", "--data", workspace / "data", "--out", out, "--steps", 2,
                   "--batch-size", 2, "--lr", "1e-3", "--seed", 3) == 0
        outs.append(out)
    assert outs[0].read_bytes() == outs[1].read_bytes()
    rows = list(csv.DictReader(open(outs[0].with_suffix(".csv"))))
    assert len(rows) == 2
    info = json.loads(outs[0].with_name("m0.ckpt.run.json").read_text())
    assert info["command"] == "pretrain" and info["seed"] == 3


def test_numeric_failure_exit(workspace, tmp_path, monkeypatch):
    def boom(*a, **k):
        raise NonFiniteLossError("nan", {"step": 0})
    monkeypatch.setattr(cli, "pretrain", boom)
    out = tmp_path / "m.ckpt"
    assert run("pretrain", "--data", workspace / "data", "--out", out, "--steps", 1) == 3
    assert out.with_suffix(".diagnostics.json").exists()


@pytest.fixture(scope="module")
def ckpt(workspace):
    out = workspace / "mae.ckpt"
    assert run("pretrain", "--data", workspace / "data", "--out", out, "--steps", 2,
               "--batch-size", 2, "--lr", "1e-3") == 0
    return out


def test_finetune_probe_eval(workspace, ckpt):
    cfg = workspace / "fast.toml"
    ft = workspace / "cls.ckpt"
    assert run("finetune", "--config", cfg, "--data", workspace / "data", "--init", ckpt,
               "--out", ft, "--face-order", "rotate-l") == 0
    summary = ft.with_suffix(".summary.txt").read_text()
    assert "face_order: rotate-l" in summary
    assert run("eval", "--ckpt", ft, "--data", workspace / "data", "--out",
               workspace / "eval.txt") == 0
    assert run("eval", "--ckpt", ft, "--data", workspace / "data") == 0
    assert run("eval", "--ckpt", ckpt, "--data", workspace / "data") == 1
    probe = workspace / "probe.txt"
    assert run("probe", "--config", cfg, "--data", workspace / "data", "--init", ckpt,
               "--out", probe) == 0
    assert "backbone_unchanged: True" in probe.with_suffix(".summary.txt").read_text()


def test_reconstruct(workspace, ckpt):
    out = workspace / "rec"
    assert run("reconstruct", "--ckpt", ckpt, "--data", workspace / "data", "--out", out,
               "--limit", 1, "--ratios", "0.5,0.8") == 0
    rows = list(csv.DictReader(open(out / "reconstruction.csv")))
    assert [float(r["ratio"]) for r in rows] == [0.5, 0.8]
    assert len(list(out.glob("*_pred.obj"))) == 2


def test_ablate_grid(workspace):
    out = workspace / "ablate.csv"
    assert run("ablate", "--config", workspace / "fast.toml", "--data", workspace / "data",
               "--out", out, "--ratios", "0.25,0.5,0.75", "--steps", 1) == 0
    rows = list(csv.DictReader(open(out)))
    assert [float(r["mask_ratio"]) for r in rows] == [0.25, 0.5, 0.75]
    assert list(rows[0]) == list(cli.ABLATE_FIELDS)
    with pytest.raises(SystemExit) as e:
        run("ablate", "--data", workspace / "data", "--out", out, "--orders", "sideways")
    assert e.value.code == 1
