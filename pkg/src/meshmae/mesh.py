"""Indexed triangle meshes: I/O, manifold queries and per-face features.

A :class:`Mesh` is an immutable pair of arrays, ``vertices`` (V, 3) float64
and ``faces`` (F, 3) int64 with counter-clockwise winding.  Everything in
this module is a pure function of its inputs.
"""

from __future__ import annotations

import io
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, TextIO

import numpy as np

FEATURE_DIM = 10

# faces with area below this fraction of bbox_diag**2 are degenerate
DEGENERATE_AREA_FACTOR = 1e-12


class MeshError(ValueError):
    """Base class for invalid mesh data."""


class MeshParseError(MeshError):
    pass


class DegenerateFaceError(MeshError):
    pass


class NonManifoldError(MeshError):
    pass


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangle mesh with validated indices.

    Parameters
    ----------
    vertices : (V, 3) array_like
        Vertex positions.
    faces : (F, 3) array_like of int
        Zero-based vertex indices, counter-clockwise.
    """

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if f.size:
            if f.min() < 0 or f.max() >= len(v):
                raise MeshError(
                    f"face index out of range [0, {len(v)}): "
                    f"min {f.min()}, max {f.max()}")
            repeated = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
            if repeated.any():
                raise MeshError(f"face {int(np.flatnonzero(repeated)[0])} repeats a vertex")
        if not np.isfinite(v).all():
            raise MeshError("non-finite vertex coordinate")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def triangles(self) -> np.ndarray:
        """(F, 3, 3) corner positions."""
        return self.vertices[self.faces]

    def bbox_diagonal(self) -> float:
        if not len(self.vertices):
            return 0.0
        return float(np.linalg.norm(self.vertices.max(0) - self.vertices.min(0)))

    def translated(self, offset) -> "Mesh":
        return Mesh(self.vertices + np.asarray(offset, dtype=np.float64), self.faces)

    def transformed(self, matrix, offset=(0.0, 0.0, 0.0)) -> "Mesh":
        m = np.asarray(matrix, dtype=np.float64)
        return Mesh(self.vertices @ m.T + np.asarray(offset, dtype=np.float64), self.faces)

    def validate(self) -> "Mesh":
        """Raise :class:`DegenerateFaceError` if any face is (near) zero-area."""
        if self.n_faces:
            areas = face_areas(self)
            limit = DEGENERATE_AREA_FACTOR * self.bbox_diagonal() ** 2
            bad = np.flatnonzero(~(areas > limit))
            if len(bad):
                raise DegenerateFaceError(
                    f"{len(bad)} degenerate face(s), first {int(bad[0])} "
                    f"with area {areas[bad[0]]:.3e}")
        return self


@dataclass(frozen=True)
class FaceFeature:
    area: float
    interior_angles: tuple[float, float, float]
    face_normal: tuple[float, float, float]
    normal_vertex_dots: tuple[float, float, float]

    def as_array(self) -> np.ndarray:
        return np.array([self.area, *self.interior_angles, *self.face_normal,
                         *self.normal_vertex_dots])


@dataclass(frozen=True)
class ManifoldReport:
    is_edge_manifold: bool
    is_vertex_manifold: bool
    is_watertight: bool
    boundary_edge_count: int
    non_manifold_edge_count: int

    @property
    def is_manifold(self) -> bool:
        return self.is_edge_manifold and self.is_vertex_manifold


# ---------------------------------------------------------------- I/O

def _as_text(source) -> TextIO:
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(bytes(source).decode("utf-8"))
    if isinstance(source, str):
        return io.StringIO(source)
    data = source.read()
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return io.StringIO(data)


def _parse_obj(text: TextIO) -> Mesh:
    vertices: list[list[float]] = []
    faces: list[list[int]] = []
    for lineno, raw in enumerate(text, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tag, *rest = line.split()
        if tag == "v":
            if len(rest) < 3:
                raise MeshParseError(f"line {lineno}: vertex needs 3 coordinates")
            try:
                vertices.append([float(x) for x in rest[:3]])
            except ValueError as exc:
                raise MeshParseError(f"line {lineno}: {exc}") from None
        elif tag == "f":
            if len(rest) != 3:
                raise MeshError(f"line {lineno}: non-triangular face with {len(rest)} vertices")
            idx = []
            for tok in rest:
                try:
                    k = int(tok.split("/", 1)[0])
                except ValueError:
                    raise MeshParseError(f"line {lineno}: bad face index {tok!r}") from None
                if k == 0:
                    raise MeshParseError(f"line {lineno}: OBJ indices are 1-based")
                # negative indices are relative to the current vertex count
                idx.append(k - 1 if k > 0 else len(vertices) + k)
            faces.append(idx)
        # vn, vt, o, g, s, usemtl, mtllib ... are ignored
    return Mesh(np.array(vertices, dtype=np.float64).reshape(-1, 3),
                np.array(faces, dtype=np.int64).reshape(-1, 3))


def _off_tokens(text: TextIO) -> Iterable[list[str]]:
    for raw in text:
        line = raw.split("#", 1)[0].strip()
        if line:
            yield line.split()


def _parse_off(text: TextIO) -> Mesh:
    lines = _off_tokens(text)
    try:
        header = next(lines)
    except StopIteration:
        raise MeshParseError("empty OFF file") from None
    if not header[0].upper().endswith("OFF"):
        raise MeshParseError(f"missing OFF header, got {header[0]!r}")
    counts = header[1:] if len(header) > 1 else next(lines, None)
    if counts is None or len(counts) < 2:
        raise MeshParseError("missing OFF counts line")
    try:
        nv, nf = int(counts[0]), int(counts[1])
    except ValueError:
        raise MeshParseError(f"bad OFF counts {counts!r}") from None
    vertices = np.empty((nv, 3))
    for i in range(nv):
        tok = next(lines, None)
        if tok is None or len(tok) < 3:
            raise MeshParseError(f"vertex {i}: expected 3 coordinates")
        try:
            vertices[i] = [float(x) for x in tok[:3]]
        except ValueError as exc:
            raise MeshParseError(f"vertex {i}: {exc}") from None
    faces = np.empty((nf, 3), dtype=np.int64)
    for i in range(nf):
        tok = next(lines, None)
        if tok is None:
            raise MeshParseError(f"face {i}: unexpected end of file")
        try:
            k = int(tok[0])
            idx = [int(x) for x in tok[1:1 + k]]
        except ValueError:
            raise MeshParseError(f"face {i}: bad index") from None
        if k != 3:
            raise MeshError(f"face {i}: non-triangular face with {k} vertices")
        if len(idx) != 3:
            raise MeshParseError(f"face {i}: expected 3 indices")
        faces[i] = idx
    return Mesh(vertices, faces)


def load_mesh(source: bytes | str | BinaryIO | TextIO, fmt: str) -> Mesh:
    """Parse OBJ or OFF text into a validated :class:`Mesh`.

    Raises
    ------
    MeshParseError
        Malformed line.
    MeshError
        Index out of range or non-triangular face.
    DegenerateFaceError
        Zero-area face.
    """
    fmt = fmt.lower().lstrip(".")
    text = _as_text(source)
    if fmt == "obj":
        mesh = _parse_obj(text)
    elif fmt == "off":
        mesh = _parse_off(text)
    else:
        raise ValueError(f"unsupported mesh format {fmt!r}")
    return mesh.validate()


def save_mesh(mesh: Mesh, fmt: str) -> bytes:
    fmt = fmt.lower().lstrip(".")
    out = io.StringIO()
    if fmt == "obj":
        for x, y, z in mesh.vertices:
            out.write(f"v {x:.6f} {y:.6f} {z:.6f}\n")
        for a, b, c in mesh.faces + 1:
            out.write(f"f {a} {b} {c}\n")
    elif fmt == "off":
        out.write("OFF\n")
        out.write(f"{mesh.n_vertices} {mesh.n_faces} 0\n")
        for x, y, z in mesh.vertices:
            out.write(f"{x:.6f} {y:.6f} {z:.6f}\n")
        for a, b, c in mesh.faces:
            out.write(f"3 {a} {b} {c}\n")
    else:
        raise ValueError(f"unsupported mesh format {fmt!r}")
    return out.getvalue().encode("utf-8")


def read_mesh(path: str | Path) -> Mesh:
    path = Path(path)
    return load_mesh(path.read_bytes(), path.suffix)


def write_mesh(mesh: Mesh, path: str | Path) -> Path:
    path = Path(path)
    path.write_bytes(save_mesh(mesh, path.suffix))
    return path


def write_point_cloud(points: np.ndarray, path: str | Path) -> Path:
    """OBJ with ``v`` lines only."""
    path = Path(path)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    path.write_text("".join(f"v {x:.6f} {y:.6f} {z:.6f}\n" for x, y, z in pts))
    return path


# ---------------------------------------------------------------- topology

def edge_face_counts(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Unique undirected edges (E, 2) and the number of faces bordering each."""
    f = mesh.faces
    if not len(f):
        return np.empty((0, 2), dtype=np.int64), np.empty(0, dtype=np.int64)
    edges = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
    return np.unique(edges, axis=0, return_counts=True)


def _vertex_manifold(mesh: Mesh) -> bool:
    # the link of every vertex must be a single path or cycle
    link: dict[int, list[tuple[int, int]]] = defaultdict(list)
    for a, b, c in mesh.faces.tolist():
        link[a].append((b, c))
        link[b].append((c, a))
        link[c].append((a, b))
    for edges in link.values():
        degree: dict[int, int] = defaultdict(int)
        adj: dict[int, list[int]] = defaultdict(list)
        for u, w in edges:
            degree[u] += 1
            degree[w] += 1
            adj[u].append(w)
            adj[w].append(u)
        if max(degree.values()) > 2:
            return False
        start = next(iter(adj))
        seen = {start}
        stack = [start]
        while stack:
            for w in adj[stack.pop()]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        if len(seen) != len(adj):
            return False
    return True


def manifold_report(mesh: Mesh) -> ManifoldReport:
    _, counts = edge_face_counts(mesh)
    boundary = int((counts == 1).sum())
    non_manifold = int((counts > 2).sum())
    return ManifoldReport(
        is_edge_manifold=non_manifold == 0,
        is_vertex_manifold=_vertex_manifold(mesh),
        is_watertight=bool(len(counts)) and bool((counts == 2).all()),
        boundary_edge_count=boundary,
        non_manifold_edge_count=non_manifold,
    )


# ---------------------------------------------------------------- geometry

def _face_cross(mesh: Mesh) -> np.ndarray:
    t = mesh.triangles()
    return np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])


def face_areas(mesh: Mesh) -> np.ndarray:
    return 0.5 * np.linalg.norm(_face_cross(mesh), axis=1)


def face_normals(mesh: Mesh) -> np.ndarray:
    cross = _face_cross(mesh)
    norm = np.linalg.norm(cross, axis=1, keepdims=True)
    if (norm == 0).any():
        raise DegenerateFaceError(f"face {int(np.flatnonzero(norm == 0)[0])} has zero area")
    return cross / norm


def face_centers(mesh: Mesh) -> np.ndarray:
    return mesh.triangles().mean(axis=1)


def vertex_normals(mesh: Mesh) -> np.ndarray:
    """Area-weighted average of incident face normals, unit length.

    The unnormalized face cross product is twice the area times the unit
    normal, so summing it gives the area weighting directly.
    """
    acc = np.zeros_like(mesh.vertices)
    cross = _face_cross(mesh)
    for k in range(3):
        np.add.at(acc, mesh.faces[:, k], cross)
    norm = np.linalg.norm(acc, axis=1, keepdims=True)
    bad = np.flatnonzero(norm[:, 0] == 0)
    if len(bad):
        raise MeshError(f"vertex {int(bad[0])} has zero normal (isolated or cancelling faces)")
    return acc / norm


def interior_angles(mesh: Mesh) -> np.ndarray:
    """(F, 3) angles at each face corner, in face vertex order."""
    t = mesh.triangles()
    out = np.empty((len(t), 3))
    for k in range(3):
        e1 = t[:, (k + 1) % 3] - t[:, k]
        e2 = t[:, (k + 2) % 3] - t[:, k]
        out[:, k] = np.arctan2(np.linalg.norm(np.cross(e1, e2), axis=1),
                               np.einsum("ij,ij->i", e1, e2))
    return out


def face_features(mesh: Mesh, normals: np.ndarray | None = None) -> np.ndarray:
    """(F, 10) features: area, 3 angles, unit normal, 3 normal/vertex-normal dots."""
    if normals is None:
        normals = vertex_normals(mesh)
    fn = face_normals(mesh)
    dots = np.einsum("fj,fkj->fk", fn, normals[mesh.faces])
    return np.concatenate([face_areas(mesh)[:, None], interior_angles(mesh), fn,
                           np.clip(dots, -1.0, 1.0)], axis=1)


def face_feature(mesh: Mesh, face_index: int, normals: np.ndarray) -> FaceFeature:
    sub = Mesh(mesh.vertices, mesh.faces[face_index:face_index + 1])
    area = face_areas(sub)[0]
    if not area > DEGENERATE_AREA_FACTOR * mesh.bbox_diagonal() ** 2:
        raise DegenerateFaceError(f"face {face_index} is degenerate (area {area:.3e})")
    row = face_features(sub, normals)[0]
    return FaceFeature(float(row[0]), tuple(row[1:4]), tuple(row[4:7]), tuple(row[7:10]))


def normalize_mesh(mesh: Mesh) -> Mesh:
    """Center the vertex centroid at the origin and scale into the unit sphere."""
    centered = mesh.vertices - mesh.vertices.mean(axis=0)
    radius = np.linalg.norm(centered, axis=1).max()
    if radius == 0:
        raise MeshError("cannot normalize a mesh with zero extent")
    return Mesh(centered / radius, mesh.faces)
