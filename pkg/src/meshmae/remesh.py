"""Regular hierarchical remeshing.

The input surface is simplified by quadric-error edge collapse to a coarse
base mesh, then every base face is split 1-to-4 ``t`` times.  Each new vertex
is projected to the closest point of the input surface.  Faces descending
from one base face form a patch; their position inside the patch follows the
recursion order, so a patch at ``t = 3`` is always 64 faces over 45 vertices.

Collapses are half-edge collapses (the surviving vertex keeps its position),
so base vertices are a subset of the input vertices and lie on the surface.
"""

from __future__ import annotations

import heapq
import itertools
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from .mesh import Mesh, MeshError, NonManifoldError, manifold_report, read_mesh, write_mesh


class RemeshError(MeshError):
    pass


class SimplificationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class RemeshConfig:
    min_faces: int = 96
    max_faces: int = 256
    input_faces: int = 500
    times: int = 3
    seed: int = 0

    def __post_init__(self):
        if not 4 <= self.min_faces <= self.max_faces:
            raise ValueError(f"need 4 <= min_faces <= max_faces, got {self.min_faces}, {self.max_faces}")
        if self.input_faces < self.max_faces:
            raise ValueError("input_faces must be >= max_faces")
        if self.times < 1:
            raise ValueError("times must be >= 1")


@dataclass(frozen=True, eq=False)
class BaseMesh:
    mesh: Mesh
    # index into the simplification input for every base vertex
    provenance: np.ndarray


@dataclass(frozen=True, eq=False)
class TMesh:
    """Subdivided mesh with faces stored patch-major: face ``p * 4**t + r``
    is rank ``r`` of patch ``p``."""

    mesh: Mesh
    patch_id: np.ndarray
    within_patch_rank: np.ndarray
    subdivision_level: int

    @property
    def faces_per_patch(self) -> int:
        return 4 ** self.subdivision_level

    @property
    def n_patches(self) -> int:
        return self.mesh.n_faces // self.faces_per_patch

    def patch_faces(self, p: int) -> np.ndarray:
        """(4**t, 3) faces of patch ``p`` in rank order."""
        sel = np.flatnonzero(self.patch_id == p)
        return self.mesh.faces[sel[np.argsort(self.within_patch_rank[sel])]]

    def check(self) -> "TMesh":
        """Raise :class:`RemeshError` unless the patch structure laws hold."""
        k = self.faces_per_patch
        n_faces = self.mesh.n_faces
        if n_faces % k:
            raise RemeshError(f"{n_faces} faces is not a multiple of {k}")
        n = n_faces // k
        counts = np.bincount(self.patch_id, minlength=n)
        if len(counts) != n or (counts != k).any():
            raise RemeshError("every patch must hold exactly %d faces" % k)
        key = self.patch_id * k + self.within_patch_rank
        if not np.array_equal(np.sort(key), np.arange(n_faces)):
            raise RemeshError("within-patch ranks are not a permutation")
        side = 2 ** self.subdivision_level
        expect = (side + 1) * (side + 2) // 2
        for p in range(n):
            uniq = len(np.unique(self.patch_faces(p)))
            if uniq != expect:
                raise RemeshError(f"patch {p} has {uniq} unique vertices, expected {expect}")
        return self

    def translated(self, offset) -> "TMesh":
        return TMesh(self.mesh.translated(offset), self.patch_id, self.within_patch_rank,
                     self.subdivision_level)

    def with_mesh(self, mesh: Mesh) -> "TMesh":
        return TMesh(mesh, self.patch_id, self.within_patch_rank, self.subdivision_level)


# ------------------------------------------------------------ simplification

def _plane_quadrics(v: np.ndarray, f: np.ndarray) -> np.ndarray:
    t = v[f]
    n = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
    area2 = np.linalg.norm(n, axis=1)
    n = n / np.where(area2 > 0, area2, 1.0)[:, None]
    p = np.concatenate([n, -np.einsum("ij,ij->i", n, t[:, 0])[:, None]], axis=1)
    # area-weighted plane quadric per face
    return 0.5 * area2[:, None, None] * np.einsum("fi,fj->fij", p, p)


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise cross product; np.cross is slow for the tiny arrays used here."""
    out = np.empty_like(a)
    out[:, 0] = a[:, 1] * b[:, 2] - a[:, 2] * b[:, 1]
    out[:, 1] = a[:, 2] * b[:, 0] - a[:, 0] * b[:, 2]
    out[:, 2] = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    return out


def _quality(tri: np.ndarray) -> np.ndarray:
    """Triangle quality in [0, 1]; 1 for equilateral."""
    e0, e1, e2 = tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 1], tri[:, 0] - tri[:, 2]
    c = _cross(e0, e2)
    area2 = np.sqrt((c * c).sum(1))
    denom = (e0 * e0).sum(1) + (e1 * e1).sum(1) + (e2 * e2).sum(1)
    return 2.0 * np.sqrt(3.0) * area2 / np.where(denom > 0, denom, 1.0)


def _tri_quality(a, b, c) -> float:
    """Scalar :func:`_quality` for three 3-tuples."""
    ux, uy, uz = b[0] - a[0], b[1] - a[1], b[2] - a[2]
    vx, vy, vz = c[0] - a[0], c[1] - a[1], c[2] - a[2]
    wx, wy, wz = c[0] - b[0], c[1] - b[1], c[2] - b[2]
    cx, cy, cz = uy * vz - uz * vy, uz * vx - ux * vz, ux * vy - uy * vx
    denom = ux * ux + uy * uy + uz * uz + vx * vx + vy * vy + vz * vz + wx * wx + wy * wy + wz * wz
    if denom <= 0.0:
        return 0.0
    return 2.0 * math.sqrt(3.0) * math.sqrt(cx * cx + cy * cy + cz * cz) / denom


class _Collapser:
    """Half-edge collapse with link-condition and flip guards."""

    flip_cos = 0.0
    min_quality = 0.02
    # weight of the triangle-shape term added to the quadric cost
    shape_weight = 1.0

    def __init__(self, mesh: Mesh, rng: np.random.Generator | None):
        self.pos = mesh.vertices
        self.pos_list = [tuple(x) for x in mesh.vertices.tolist()]
        self.pos_h = np.concatenate([mesh.vertices, np.ones((mesh.n_vertices, 1))], axis=1)
        self.faces = [list(f) for f in mesh.faces.tolist()]
        self.face_alive = [True] * len(self.faces)
        self.n_live = len(self.faces)
        nv = mesh.n_vertices
        self.vfaces: list[set[int]] = [set() for _ in range(nv)]
        for i, f in enumerate(self.faces):
            for x in f:
                self.vfaces[x].add(i)
        self.vert_alive = [bool(s) for s in self.vfaces]
        self.version = [0] * nv
        fq = _plane_quadrics(mesh.vertices, mesh.faces)
        self.Q = np.zeros((nv, 4, 4))
        for k in range(3):
            np.add.at(self.Q, mesh.faces[:, k], fq)
        self.boundary = set()
        edge_count: dict[tuple[int, int], int] = {}
        for f in self.faces:
            for a, b in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0])):
                key = (a, b) if a < b else (b, a)
                edge_count[key] = edge_count.get(key, 0) + 1
        for (a, b), c in edge_count.items():
            if c == 1:
                self.boundary.update((a, b))
        self.rng = rng
        self.heap: list = []
        self.counter = 0
        self.jitter = 0.0
        if rng is not None:
            costs = [self._cost(a, b) for a, b in edge_count]
            med = float(np.median(costs)) if costs else 0.0
            if med <= 0.0:
                med = 1e-12 * mesh.bbox_diagonal() ** 2
            self.jitter = 0.01 * med
        for a, b in edge_count:
            self._push(a, b)
            self._push(b, a)

    def _ring_quality(self, keep: int, remove: int) -> float:
        """Worst quality of the faces around ``remove`` once it sits on ``keep``.

        Plain floats: the rings are a handful of triangles, too small for numpy.
        """
        pts = self.pos_list
        pk = pts[keep]
        shared = self.vfaces[keep]
        worst = 1.0
        for fi in self.vfaces[remove]:
            if fi in shared:
                continue
            i, j, k = self.faces[fi]
            q = _tri_quality(pk if i == remove else pts[i], pk if j == remove else pts[j],
                             pk if k == remove else pts[k])
            if q < worst:
                worst = q
        return worst

    def _cost(self, keep: int, remove: int) -> float:
        p = self.pos_h[keep]
        cost = float(p @ (self.Q[keep] + self.Q[remove]) @ p)
        if self.shape_weight:
            d2 = sum((x - y) ** 2 for x, y in zip(self.pos_list[keep], self.pos_list[remove]))
            cost += self.shape_weight * d2 * d2 * (1.0 - self._ring_quality(keep, remove))
        return cost

    def _push(self, keep: int, remove: int) -> None:
        cost = self._cost(keep, remove)
        if self.jitter:
            cost += self.rng.uniform(0.0, self.jitter)
        self.counter += 1
        heapq.heappush(self.heap, (cost, self.counter, keep, remove,
                                   self.version[keep], self.version[remove]))

    def _neighbors(self, v: int) -> set[int]:
        out = set()
        for fi in self.vfaces[v]:
            out.update(self.faces[fi])
        out.discard(v)
        return out

    def _valid(self, keep: int, remove: int) -> bool:
        if remove in self.boundary:
            return False
        shared = self.vfaces[keep] & self.vfaces[remove]
        if len(shared) != 2:
            return False
        opposite = set()
        for fi in shared:
            opposite.update(self.faces[fi])
        opposite -= {keep, remove}
        if self._neighbors(keep) & self._neighbors(remove) != opposite:
            return False
        for o in opposite:
            if len(self.vfaces[o]) <= 3:
                return False
        if self.n_live - 2 < 4:
            return False
        ring = [self.faces[fi] for fi in self.vfaces[remove] - shared]
        tri = self.pos[ring]
        old_n = _cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        tri[np.array(ring) == remove] = self.pos[keep]
        new_n = _cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        na = np.sqrt((new_n * new_n).sum(1))
        no = np.sqrt((old_n * old_n).sum(1))
        if (na == 0.0).any() or ((new_n * old_n).sum(1) <= self.flip_cos * na * no).any():
            return False
        return bool((_quality(tri) >= self.min_quality).all())

    def _collapse(self, keep: int, remove: int) -> None:
        shared = self.vfaces[keep] & self.vfaces[remove]
        for fi in shared:
            self.face_alive[fi] = False
            self.n_live -= 1
            for x in self.faces[fi]:
                if x != remove:
                    self.vfaces[x].discard(fi)
        for fi in self.vfaces[remove] - shared:
            f = self.faces[fi]
            f[f.index(remove)] = keep
            self.vfaces[keep].add(fi)
        self.vfaces[remove] = set()
        self.vert_alive[remove] = False
        if remove in self.boundary:
            self.boundary.add(keep)
        self.Q[keep] += self.Q[remove]
        self.version[keep] += 1
        self.version[remove] += 1
        for w in self._neighbors(keep):
            self._push(keep, w)
            self._push(w, keep)

    def run(self, target: int, floor: int = 4) -> bool:
        """Collapse until at most ``target`` faces remain; True if reached."""
        while self.n_live > target:
            if self.n_live - 2 < floor:
                return False
            found = False
            while self.heap:
                _, _, keep, remove, vk, vr = heapq.heappop(self.heap)
                if not (self.vert_alive[keep] and self.vert_alive[remove]):
                    continue
                if vk != self.version[keep] or vr != self.version[remove]:
                    continue
                if remove not in self._neighbors(keep):
                    continue
                if self._valid(keep, remove):
                    self._collapse(keep, remove)
                    found = True
                    break
            if not found:
                return False
        return True

    def result(self) -> tuple[Mesh, np.ndarray]:
        faces = np.array([f for f, alive in zip(self.faces, self.face_alive) if alive],
                         dtype=np.int64).reshape(-1, 3)
        used = np.unique(faces)
        remap = np.full(len(self.pos), -1, dtype=np.int64)
        remap[used] = np.arange(len(used))
        return Mesh(self.pos[used], remap[faces]), used


def simplify(mesh: Mesh, target_faces: int, rng_seed: int | None = None) -> Mesh:
    """Quadric-error edge collapse down to at most ``target_faces`` faces.

    If no further valid collapse exists before the target is reached, the
    best achievable mesh is returned and a :class:`SimplificationWarning`
    is issued.
    """
    if target_faces < 4:
        raise ValueError("target_faces must be >= 4")
    if mesh.n_faces <= target_faces:
        return mesh
    if not manifold_report(mesh).is_edge_manifold:
        raise NonManifoldError("simplification requires an edge-manifold mesh")
    rng = None if rng_seed is None else np.random.default_rng(rng_seed)
    col = _Collapser(mesh, rng)
    if not col.run(target_faces):
        warnings.warn(f"simplification stalled at {col.n_live} faces (target {target_faces})",
                      SimplificationWarning, stacklevel=2)
    return col.result()[0]


def build_base(mesh: Mesh, min_faces: int = 96, max_faces: int = 256,
               rng_seed: int = 0) -> BaseMesh:
    """Simplify to a base mesh whose face count lies in ``[min_faces, max_faces]``.

    The seed draws the target face count uniformly from the bounds and
    jitters collapse costs, so different seeds give different connectivity.
    """
    n = mesh.n_faces
    if min_faces <= n <= max_faces:
        return BaseMesh(mesh, np.arange(mesh.n_vertices))
    if n < min_faces:
        raise RemeshError(f"input has {n} faces, fewer than min_faces={min_faces}")
    if not manifold_report(mesh).is_edge_manifold:
        raise NonManifoldError("base mesh construction requires an edge-manifold mesh")
    rng = np.random.default_rng(rng_seed)
    target = int(rng.integers(min_faces, max_faces + 1))
    col = _Collapser(mesh, rng)
    col.run(target, floor=min_faces)
    if col.n_live > max_faces:
        raise RemeshError(f"simplification stalled at {col.n_live} faces (max_faces={max_faces})")
    base, used = col.result()
    return BaseMesh(base, used)


# ------------------------------------------------------------ projection

def closest_points_on_triangles(p: np.ndarray, a: np.ndarray, b: np.ndarray,
                                c: np.ndarray) -> np.ndarray:
    """Closest point on triangle (a, b, c) to p, row-wise (Voronoi regions)."""
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("...i,...i->...", ab, ap)
    d2 = np.einsum("...i,...i->...", ac, ap)
    bp = p - b
    d3 = np.einsum("...i,...i->...", ab, bp)
    d4 = np.einsum("...i,...i->...", ac, bp)
    cp = p - c
    d5 = np.einsum("...i,...i->...", ab, cp)
    d6 = np.einsum("...i,...i->...", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v = vb / denom
        w = vc / denom
        out = a + ab * v[..., None] + ac * w[..., None]

        # edge and vertex regions, lowest priority first so earlier ones win
        w_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        m = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
        out = np.where(m[..., None], b + (c - b) * w_bc[..., None], out)
        w_ac = d2 / (d2 - d6)
        m = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        out = np.where(m[..., None], a + ac * w_ac[..., None], out)
        m = (d6 >= 0) & (d5 <= d6)
        out = np.where(m[..., None], c, out)
        w_ab = d1 / (d1 - d3)
        m = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        out = np.where(m[..., None], a + ab * w_ab[..., None], out)
        m = (d3 >= 0) & (d4 <= d3)
        out = np.where(m[..., None], b, out)
        m = (d1 <= 0) & (d2 <= 0)
        out = np.where(m[..., None], a, out)
    return out


class SurfaceLocator:
    """Exact closest-point queries against a triangle mesh.

    A k-d tree over triangle centroids gives an upper bound on each query's
    distance; every triangle whose bounding box is nearer than that bound is
    then tested exactly, so the result is the true closest point.
    """

    def __init__(self, mesh: Mesh, k: int = 8, chunk: int = 2048):
        self.tri = mesh.triangles()
        self.lo = self.tri.min(axis=1)
        self.hi = self.tri.max(axis=1)
        centroids = self.tri.mean(axis=1)
        self.tree = cKDTree(centroids)
        self.reach = float(np.linalg.norm(self.tri - centroids[:, None], axis=2).max())
        self.k = min(k, len(self.tri))
        self.chunk = chunk

    def _exact(self, pts: np.ndarray, tri_idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        t = self.tri[tri_idx]
        q = closest_points_on_triangles(pts, t[..., 0, :], t[..., 1, :], t[..., 2, :])
        return q, np.linalg.norm(q - pts, axis=-1)

    def query(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Closest surface points and their distances."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        out = np.empty_like(pts)
        dist = np.empty(len(pts))
        for s in range(0, len(pts), self.chunk):
            p = pts[s:s + self.chunk]
            _, cidx = self.tree.query(p, k=self.k)
            cidx = cidx.reshape(len(p), -1)
            _, cd = self._exact(p[:, None, :], cidx)
            bound = cd.min(axis=1) * (1 + 1e-9) + 1e-12
            # only triangles whose centroid ball can reach within the bound
            near = self.tree.query_ball_point(p, bound + self.reach, return_sorted=False)
            lens = np.fromiter((len(x) for x in near), dtype=np.int64, count=len(p))
            pi = np.repeat(np.arange(len(p)), lens)
            ti = np.fromiter(itertools.chain.from_iterable(near), dtype=np.int64, count=int(lens.sum()))
            g = np.maximum(np.maximum(self.lo[ti] - p[pi], p[pi] - self.hi[ti]), 0.0)
            keep = np.einsum("ij,ij->i", g, g) <= bound[pi] ** 2
            pi, ti = pi[keep], ti[keep]
            q, d = self._exact(p[pi], ti)
            order = np.lexsort((d, pi))
            first = order[np.r_[True, pi[order][1:] != pi[order][:-1]]]
            out[s + pi[first]] = q[first]
            dist[s + pi[first]] = d[first]
        return out, dist


# ------------------------------------------------------------ subdivision

def _anchor(face: np.ndarray) -> np.ndarray:
    """Cyclically rotate so the lowest vertex index comes first (keeps winding)."""
    k = int(np.argmin(face))
    return np.roll(face, -k)


def _split(faces: np.ndarray, n_vertices: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """1-to-4 split emitting children [corner 0, corner 1, corner 2, center].

    Returns new faces, the (E, 2) endpoint pairs of new midpoint vertices and
    their indices.
    """
    a, b, c = faces[:, 0], faces[:, 1], faces[:, 2]
    pairs = np.stack([np.stack([a, b], 1), np.stack([b, c], 1), np.stack([c, a], 1)], 1)
    keys = np.sort(pairs.reshape(-1, 2), axis=1)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    mid_idx = n_vertices + np.arange(len(uniq))
    m = mid_idx[inv.reshape(-1)].reshape(-1, 3)
    mab, mbc, mca = m[:, 0], m[:, 1], m[:, 2]
    children = np.stack([
        np.stack([a, mab, mca], 1),
        np.stack([b, mbc, mab], 1),
        np.stack([c, mca, mbc], 1),
        np.stack([mbc, mca, mab], 1),
    ], 1).reshape(-1, 3)
    return children, uniq, mid_idx


def subdivide_project(base: BaseMesh | Mesh, times: int = 3,
                      target_surface: Mesh | None = None) -> TMesh:
    """Split every base face 1-to-4 ``times`` times, projecting new vertices.

    With ``target_surface=None`` new vertices stay at edge midpoints.
    """
    if times < 1:
        raise ValueError("times must be >= 1")
    bmesh = base.mesh if isinstance(base, BaseMesh) else base
    faces = np.array([_anchor(f) for f in bmesh.faces], dtype=np.int64).reshape(-1, 3)
    verts = bmesh.vertices.copy()
    locator = SurfaceLocator(target_surface) if target_surface is not None else None
    for _ in range(times):
        faces, pairs, _ = _split(faces, len(verts))
        mids = 0.5 * (verts[pairs[:, 0]] + verts[pairs[:, 1]])
        if locator is not None:
            mids, _ = locator.query(mids)
        verts = np.concatenate([verts, mids])
    per = 4 ** times
    n = bmesh.n_faces
    patch_id = np.repeat(np.arange(n), per)
    rank = np.tile(np.arange(per), n)
    return TMesh(Mesh(verts, faces), patch_id, rank, times)


def _barycentric_faces(corners: list[tuple[int, int, int]], times: int) -> list[frozenset]:
    faces = [tuple(corners)]
    for _ in range(times):
        nxt = []
        for a, b, c in faces:
            mab, mbc, mca = (tuple((x + y) // 2 for x, y in zip(p, q))
                             for p, q in ((a, b), (b, c), (c, a)))
            nxt += [(a, mab, mca), (b, mbc, mab), (c, mca, mbc), (mbc, mca, mab)]
        faces = nxt
    return [frozenset(f) for f in faces]


def child_order_permutation(times: int, shift: int) -> np.ndarray:
    """Rank permutation induced by starting the recursion at base corner ``shift``.

    ``perm[r]`` is the canonical rank of the face that gets rank ``r`` when
    the base face ``(a, b, c)`` is relabelled ``(b, c, a)`` (shift 1) or
    ``(c, a, b)`` (shift 2).  Faces are matched through integer barycentric
    coordinates of their corners.
    """
    s = 2 ** times
    corners = [(s, 0, 0), (0, s, 0), (0, 0, s)]
    ref = _barycentric_faces(corners, times)
    rot = _barycentric_faces(corners[shift:] + corners[:shift], times)
    lookup = {f: i for i, f in enumerate(ref)}
    return np.array([lookup[f] for f in rot])


# ------------------------------------------------------------ pipeline

def remesh_pipeline(raw: Mesh, config: RemeshConfig = RemeshConfig()) -> TMesh:
    """Uniform simplification, seeded base mesh, ``t`` projected subdivisions."""
    report = manifold_report(raw)
    if not report.is_edge_manifold:
        raise NonManifoldError(
            f"input is not edge-manifold ({report.non_manifold_edge_count} non-manifold edges)")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SimplificationWarning)
        surface = simplify(raw, config.input_faces)
    base = build_base(surface, config.min_faces, config.max_faces, config.seed)
    return subdivide_project(base, config.times, surface)


class Variant(NamedTuple):
    seed: int
    tmesh: TMesh | None
    error: str | None


def remesh_variants(raw: Mesh, k: int, base_seed: int = 0,
                    config: RemeshConfig = RemeshConfig()) -> list[Variant]:
    """``k`` remeshings with seeds ``base_seed .. base_seed + k - 1``."""
    out = []
    for s in range(base_seed, base_seed + k):
        cfg = RemeshConfig(config.min_faces, config.max_faces, config.input_faces,
                           config.times, s)
        try:
            out.append(Variant(s, remesh_pipeline(raw, cfg), None))
        except MeshError as exc:
            out.append(Variant(s, None, f"{type(exc).__name__}: {exc}"))
    return out


# ------------------------------------------------------------ files

def write_tmesh(tmesh: TMesh, path: str | Path) -> Path:
    """OBJ geometry plus a ``.patch`` sidecar with ``patch_id rank`` per face."""
    path = Path(path)
    write_mesh(tmesh.mesh, path)
    rows = np.stack([tmesh.patch_id, tmesh.within_patch_rank], 1)
    lines = [f"# level {tmesh.subdivision_level}\n"]
    lines += [f"{p} {r}\n" for p, r in rows.tolist()]
    path.with_suffix(".patch").write_text("".join(lines))
    return path


def read_tmesh(path: str | Path) -> TMesh:
    path = Path(path)
    mesh = read_mesh(path)
    text = path.with_suffix(".patch").read_text().splitlines()
    level = 3
    rows = []
    for line in text:
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 2 and parts[0] == "level":
                level = int(parts[1])
            continue
        if line.strip():
            rows.append([int(x) for x in line.split()])
    ann = np.array(rows, dtype=np.int64).reshape(-1, 2)
    if len(ann) != mesh.n_faces:
        raise RemeshError(f"{path}: {len(ann)} annotations for {mesh.n_faces} faces")
    return TMesh(mesh, ann[:, 0], ann[:, 1], level).check()
