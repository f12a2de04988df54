"""Procedural watertight meshes and labelled desk-scale datasets.

These stand in for ModelNet-style corpora: every generator returns a closed,
consistently oriented manifold mesh so the remeshing pipeline accepts it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .mesh import Mesh, face_centers, vertex_normals, write_mesh

CLASS_FAMILIES = ("sphere", "box", "cylinder", "torus", "cone", "ellipsoid")
SEG_FAMILIES = ("hemispheres", "capped_cylinder")


def _merge_vertices(vertices: np.ndarray, faces: np.ndarray, decimals: int = 9) -> Mesh:
    key = np.round(vertices, decimals)
    uniq, inverse = np.unique(key, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    # keep the first original position for each merged key
    first = np.full(len(uniq), -1)
    for i in range(len(inverse) - 1, -1, -1):
        first[inverse[i]] = i
    return Mesh(vertices[first], inverse[faces])


def icosphere(level: int = 3, radius: float = 1.0) -> Mesh:
    """Subdivided icosahedron; ``20 * 4**level`` faces."""
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
             (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
             (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    v = [np.array(p, dtype=np.float64) / np.linalg.norm(p) for p in verts]
    f = faces
    for _ in range(level):
        cache: dict[tuple[int, int], int] = {}

        def mid(a: int, b: int) -> int:
            key = (a, b) if a < b else (b, a)
            if key not in cache:
                p = v[a] + v[b]
                v.append(p / np.linalg.norm(p))
                cache[key] = len(v) - 1
            return cache[key]

        nxt = []
        for a, b, c in f:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            nxt += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        f = nxt
    return Mesh(np.array(v) * radius, np.array(f))


def box(extents=(1.0, 1.0, 1.0), divisions: int = 8) -> Mesh:
    """Axis-aligned box centred at the origin, each side an n x n grid."""
    ext = np.asarray(extents, dtype=np.float64) / 2.0
    n = divisions
    verts, faces = [], []
    s = np.linspace(-1.0, 1.0, n + 1)
    uu, vv = np.meshgrid(s, s, indexing="ij")
    for axis in range(3):
        for sign in (-1.0, 1.0):
            u_ax, v_ax = (axis + 1) % 3, (axis + 2) % 3
            if sign < 0:
                u_ax, v_ax = v_ax, u_ax
            p = np.zeros((n + 1, n + 1, 3))
            p[..., axis] = sign
            p[..., u_ax] = uu
            p[..., v_ax] = vv
            base = sum(len(x) for x in verts)
            verts.append(p.reshape(-1, 3))
            idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1) + base
            for i in range(n):
                for j in range(n):
                    a, b, c, d = idx[i, j], idx[i + 1, j], idx[i + 1, j + 1], idx[i, j + 1]
                    faces += [(a, b, c), (a, c, d)]
    v = np.concatenate(verts) * ext
    return _merge_vertices(v, np.array(faces))


def _revolve(profile: np.ndarray, segments: int) -> Mesh:
    """Surface of revolution about z for a profile of (r, z) rows.

    The first and last profile points must lie on the axis (r = 0) so the
    result is closed; they become the two poles.
    """
    rings = profile[1:-1]
    theta = np.linspace(0.0, 2 * np.pi, segments, endpoint=False)
    ring_v = np.stack([rings[:, 0, None] * np.cos(theta), rings[:, 0, None] * np.sin(theta),
                       np.broadcast_to(rings[:, 1, None], (len(rings), segments))], axis=-1)
    v = np.concatenate([[[0.0, 0.0, profile[0, 1]]], ring_v.reshape(-1, 3),
                        [[0.0, 0.0, profile[-1, 1]]]])
    top = len(v) - 1
    faces = []

    def ring(i: int, j: int) -> int:
        return 1 + i * segments + j % segments

    # profile runs bottom -> top; winding chosen so normals point outward
    for j in range(segments):
        faces.append((0, ring(0, j + 1), ring(0, j)))
    for i in range(len(rings) - 1):
        for j in range(segments):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j + 1), ring(i + 1, j)
            faces += [(a, b, c), (a, c, d)]
    last = len(rings) - 1
    for j in range(segments):
        faces.append((top, ring(last, j), ring(last, j + 1)))
    return Mesh(v, np.array(faces))


def cylinder(radius: float = 0.5, height: float = 1.0, segments: int = 24,
             side_rings: int = 8, cap_rings: int = 3) -> Mesh:
    h = height / 2.0
    cap = np.linspace(0.0, radius, cap_rings + 1)
    side = np.linspace(-h, h, side_rings + 1)
    profile = np.concatenate([
        np.stack([cap, np.full_like(cap, -h)], 1),
        np.stack([np.full(side_rings - 1, radius), side[1:-1]], 1),
        np.stack([cap[::-1], np.full_like(cap, h)], 1),
    ])
    return _revolve(profile, segments)


def cone(radius: float = 0.5, height: float = 1.0, segments: int = 24,
         side_rings: int = 10, cap_rings: int = 3) -> Mesh:
    h = height / 2.0
    cap = np.linspace(0.0, radius, cap_rings + 1)
    s = np.linspace(0.0, 1.0, side_rings + 1)[1:]
    profile = np.concatenate([
        np.stack([cap, np.full_like(cap, -h)], 1),
        np.stack([radius * (1 - s), -h + height * s], 1),
    ])
    return _revolve(profile, segments)


def torus(major: float = 0.7, minor: float = 0.3, major_segments: int = 32,
          minor_segments: int = 12) -> Mesh:
    u = np.linspace(0, 2 * np.pi, major_segments, endpoint=False)
    w = np.linspace(0, 2 * np.pi, minor_segments, endpoint=False)
    uu, ww = np.meshgrid(u, w, indexing="ij")
    r = major + minor * np.cos(ww)
    v = np.stack([r * np.cos(uu), r * np.sin(uu), minor * np.sin(ww)], -1).reshape(-1, 3)
    faces = []
    for i in range(major_segments):
        for j in range(minor_segments):
            a = i * minor_segments + j
            b = ((i + 1) % major_segments) * minor_segments + j
            c = ((i + 1) % major_segments) * minor_segments + (j + 1) % minor_segments
            d = i * minor_segments + (j + 1) % minor_segments
            faces += [(a, b, c), (a, c, d)]
    return Mesh(v, np.array(faces))


def add_noise(mesh: Mesh, level: float, rng: np.random.Generator) -> Mesh:
    """Displace vertices along their normals by ``level * bbox_diag * N(0, 1)``."""
    if level <= 0:
        return mesh
    n = vertex_normals(mesh)
    d = rng.normal(0.0, level * mesh.bbox_diagonal(), size=len(n))
    return Mesh(mesh.vertices + n * d[:, None], mesh.faces)


def random_rotation(mesh: Mesh, rng: np.random.Generator) -> Mesh:
    """Apply a uniformly random rotation about the origin."""
    return mesh.transformed(Rotation.random(random_state=rng).as_matrix())


def make_shape(family: str, rng: np.random.Generator, noise: float = 0.0,
               rotate: bool = False) -> Mesh:
    """One random instance of a shape family, with randomized proportions.

    ``rotate`` applies a random orientation, so that classes can only be told
    apart by shape rather than by the axis they happen to be aligned with.
    """
    def u(lo, hi):
        return float(rng.uniform(lo, hi))

    if family == "sphere":
        m = icosphere(3, radius=u(0.8, 1.2))
    elif family == "ellipsoid":
        m = icosphere(3).transformed(np.diag([u(1.3, 1.8), u(0.8, 1.1), u(0.5, 0.8)]))
    elif family == "box":
        m = box((u(0.7, 1.3), u(0.7, 1.3), u(0.7, 1.3)), divisions=8)
    elif family == "cylinder":
        m = cylinder(radius=u(0.35, 0.6), height=u(0.8, 1.4))
    elif family == "cone":
        m = cone(radius=u(0.4, 0.6), height=u(0.8, 1.4))
    elif family == "torus":
        m = torus(major=u(0.6, 0.8), minor=u(0.2, 0.3))
    elif family in ("hemispheres", "capped_cylinder"):
        m, _ = make_segmentation_shape(family, rng, noise)
        return m
    else:
        raise ValueError(f"unknown shape family {family!r}")
    m = add_noise(m, noise, rng)
    return random_rotation(m, rng) if rotate else m


def make_segmentation_shape(family: str, rng: np.random.Generator,
                            noise: float = 0.0) -> tuple[Mesh, np.ndarray]:
    """Mesh plus per-face part labels (two parts per shape)."""
    if family == "hemispheres":
        m = icosphere(3, radius=float(rng.uniform(0.8, 1.2)))
        m = add_noise(m, noise, rng)
        labels = (face_centers(m)[:, 2] > 0).astype(np.int64)
    elif family == "capped_cylinder":
        m = cylinder(radius=float(rng.uniform(0.35, 0.6)), height=float(rng.uniform(0.8, 1.4)))
        m = add_noise(m, noise, rng)
        c = face_centers(m)
        h = np.abs(m.vertices[:, 2]).max()
        labels = (np.abs(c[:, 2]) > h * 0.999).astype(np.int64)
    else:
        raise ValueError(f"unknown segmentation family {family!r}")
    return m, labels


@dataclass
class SyntheticSpec:
    families: tuple[str, ...] = ("sphere", "box", "cylinder")
    per_class: int = 10
    noise: float = 0.0
    seed: int = 0
    splits: dict[str, float] = field(default_factory=lambda: {"train": 0.8, "test": 0.2})
    rotate: bool = False

    def __post_init__(self):
        if self.per_class < 1:
            raise ValueError("per_class must be >= 1")
        for fam in self.families:
            if fam not in CLASS_FAMILIES + SEG_FAMILIES:
                raise ValueError(f"unknown shape family {fam!r}")


def write_dataset(spec: SyntheticSpec, root: str | Path) -> dict:
    """Write ``<split>/<class>/<mesh>.obj`` (plus ``.labels`` for part families).

    Returns the manifest that is also saved as ``dataset.json``.
    """
    root = Path(root)
    rng = np.random.default_rng(spec.seed)
    entries = []
    names = list(spec.splits)
    for fam in spec.families:
        counts = [int(round(spec.per_class * spec.splits[s])) for s in names]
        counts[0] += spec.per_class - sum(counts)
        k = 0
        for split, count in zip(names, counts):
            d = root / split / fam
            d.mkdir(parents=True, exist_ok=True)
            for _ in range(count):
                path = d / f"{fam}_{k:04d}.obj"
                if fam in SEG_FAMILIES:
                    mesh, labels = make_segmentation_shape(fam, rng, spec.noise)
                    np.savetxt(path.with_suffix(".labels"), labels, fmt="%d")
                else:
                    mesh = make_shape(fam, rng, spec.noise, spec.rotate)
                write_mesh(mesh, path)
                entries.append({"path": str(path.relative_to(root)), "split": split,
                                "class": fam, "faces": mesh.n_faces})
                k += 1
    manifest = {"families": list(spec.families), "per_class": spec.per_class,
                "noise": spec.noise, "seed": spec.seed, "rotate": spec.rotate,
                "meshes": entries}
    (root / "dataset.json").write_text(json.dumps(manifest, indent=2))
    return manifest
