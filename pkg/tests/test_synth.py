import json

import numpy as np
import pytest

from meshmae.mesh import manifold_report, read_mesh
from meshmae.synth import (
    CLASS_FAMILIES, SEG_FAMILIES, SyntheticSpec, icosphere, make_segmentation_shape, make_shape,
    write_dataset,
)


@pytest.mark.parametrize("family", CLASS_FAMILIES + SEG_FAMILIES)
def test_shapes_are_closed_manifolds(family):
    m = make_shape(family, np.random.default_rng(0))
    r = manifold_report(m.validate())
    assert r.is_manifold and r.is_watertight
    assert m.n_faces >= 500


def test_icosphere_counts():
    for level in range(4):
        m = icosphere(level)
        assert m.n_faces == 20 * 4 ** level
        assert np.allclose(np.linalg.norm(m.vertices, axis=1), 1.0)


@pytest.mark.parametrize("family", SEG_FAMILIES)
def test_segmentation_labels(family):
    m, labels = make_segmentation_shape(family, np.random.default_rng(0))
    assert len(labels) == m.n_faces and set(labels.tolist()) == {0, 1}


def test_write_dataset(tmp_path):
    spec = SyntheticSpec(("sphere", "hemispheres"), per_class=5, seed=2)
    manifest = write_dataset(spec, tmp_path)
    assert len(manifest["meshes"]) == 10
    splits = [e["split"] for e in manifest["meshes"] if e["class"] == "sphere"]
    assert splits.count("train") == 4 and splits.count("test") == 1
    e = next(e for e in manifest["meshes"] if e["class"] == "hemispheres")
    assert (tmp_path / e["path"]).with_suffix(".labels").exists()
    assert read_mesh(tmp_path / e["path"]).n_faces == e["faces"]
    assert json.loads((tmp_path / "dataset.json").read_text())["seed"] == 2
    with pytest.raises(ValueError):
        SyntheticSpec(("pyramid",))


def test_rotation_is_rigid():
    a = make_shape("box", np.random.default_rng(4))
    b = make_shape("box", np.random.default_rng(4), rotate=True)
    r, *_ = np.linalg.lstsq(a.vertices, b.vertices, rcond=None)
    assert np.allclose(a.vertices @ r, b.vertices, atol=1e-9)
    assert np.allclose(r.T @ r, np.eye(3), atol=1e-9)
    assert np.linalg.det(r) == pytest.approx(1.0)
    assert not np.allclose(r, np.eye(3))
