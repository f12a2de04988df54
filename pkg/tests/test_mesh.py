import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from meshmae.mesh import (
    DegenerateFaceError, Mesh, MeshError, MeshParseError, face_areas, face_feature,
    face_features, face_normals, interior_angles, load_mesh, manifold_report,
    normalize_mesh, save_mesh, vertex_normals,
)
from meshmae.synth import box, icosphere


def tetra():
    v = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]
    f = [[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]]
    return Mesh(v, f)


def random_triangles(seed, n):
    rng = np.random.default_rng(seed)
    tri = rng.normal(size=(n, 3, 3))
    # keep only clearly non-degenerate faces
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    keep = np.linalg.norm(cross, axis=1) > 1e-2
    tri = tri[keep]
    return Mesh(tri.reshape(-1, 3), np.arange(3 * len(tri)).reshape(-1, 3))


def test_obj_off_roundtrip():
    m = tetra()
    for fmt in ("obj", "off"):
        back = load_mesh(save_mesh(m, fmt), fmt)
        assert np.allclose(back.vertices, m.vertices)
        assert np.array_equal(back.faces, m.faces)


def test_obj_parse_variants():
    text = "# c\nv 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1\n"
    m = load_mesh(io.StringIO(text), "obj")
    assert m.n_faces == 1 and m.n_vertices == 3
    neg = load_mesh("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n", "obj")
    assert np.array_equal(neg.faces, [[0, 1, 2]])


@pytest.mark.parametrize("text, err", [
    ("v 0 0\nf 1 2 3\n", MeshParseError),
    ("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n", MeshError),
    ("v 0 0 0\nv 1 0 0\nv 2 0 0\nf 1 2 3\n", DegenerateFaceError),
])
def test_obj_errors(text, err):
    with pytest.raises(err):
        load_mesh(text, "obj")


def test_unknown_format():
    with pytest.raises(ValueError):
        load_mesh("", "stl")


def test_manifold_report():
    r = manifold_report(tetra())
    assert r.is_manifold and r.is_watertight and r.boundary_edge_count == 0
    open_mesh = Mesh(tetra().vertices, tetra().faces[:3])
    r = manifold_report(open_mesh)
    assert r.is_manifold and not r.is_watertight and r.boundary_edge_count == 3
    # three faces on one edge
    v = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1]]
    fan = Mesh(v, [[0, 1, 2], [1, 0, 3], [0, 1, 4]])
    assert manifold_report(fan).non_manifold_edge_count == 1


def test_closed_form_features():
    # right isoceles triangle in the xy plane
    m = Mesh([[0, 0, 0], [2, 0, 0], [0, 2, 0]], [[0, 1, 2]])
    feat = face_feature(m, 0, vertex_normals(m))
    assert feat.area == pytest.approx(2.0)
    assert np.allclose(feat.interior_angles, [np.pi / 2, np.pi / 4, np.pi / 4])
    assert np.allclose(feat.face_normal, [0, 0, 1])
    assert np.allclose(feat.normal_vertex_dots, 1.0)


def test_equilateral_angles():
    s = np.sqrt(3) / 2
    m = Mesh([[0, 0, 0], [1, 0, 0], [0.5, s, 0]], [[0, 1, 2]])
    assert np.allclose(interior_angles(m), np.pi / 3)
    assert face_areas(m)[0] == pytest.approx(np.sqrt(3) / 4)


def test_vertex_normals_sphere():
    m = icosphere(2)
    n = vertex_normals(m)
    radial = m.vertices / np.linalg.norm(m.vertices, axis=1, keepdims=True)
    assert (np.einsum("ij,ij->i", n, radial) > 0.99).all()


def test_vertex_normal_area_weighting():
    # vertex 0 shared by a big face (normal +z) and a small face (normal +x)
    v = [[0, 0, 0], [4, 0, 0], [0, 4, 0], [0, 0, 1], [0, -1, 0]]
    m = Mesh(v, [[0, 1, 2], [0, 3, 4]])
    n = vertex_normals(m)[0]
    big, small = 8.0, 0.5
    expect = np.array([small, 0, big]) / np.hypot(small, big)
    assert np.allclose(n, expect)


def test_feature_dims_and_box_normals():
    m = box(divisions=2)
    f = face_features(m)
    assert f.shape == (m.n_faces, 10)
    # every box face normal is axis-aligned
    assert np.allclose(np.sort(np.abs(f[:, 4:7]), axis=1), [0, 0, 1])


def test_normalize_mesh():
    m = normalize_mesh(icosphere(1, radius=3.0).translated([5, -2, 1]))
    assert np.allclose(m.vertices.mean(0), 0, atol=1e-12)
    assert np.linalg.norm(m.vertices, axis=1).max() == pytest.approx(1.0)
    with pytest.raises(MeshError):
        normalize_mesh(Mesh(np.zeros((3, 3)) + 1, np.empty((0, 3), int)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_angles_sum_to_pi(seed):
    m = random_triangles(seed, 50)
    assert np.allclose(interior_angles(m).sum(1), np.pi, atol=1e-9)
    assert np.allclose(np.linalg.norm(face_normals(m), axis=1), 1.0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_rigid_motion_invariance(seed):
    m = icosphere(1).transformed(np.diag([1.0, 0.7, 0.4]))
    rot = Rotation.random(random_state=seed).as_matrix()
    shift = np.random.default_rng(seed).normal(size=3) * 10
    moved = m.transformed(rot, shift)
    a, b = face_features(m), face_features(moved)
    inv = [0, 1, 2, 3, 7, 8, 9]
    assert np.allclose(a[:, inv], b[:, inv], atol=1e-9)
    assert np.allclose(a[:, 4:7] @ rot.T, b[:, 4:7], atol=1e-9)
