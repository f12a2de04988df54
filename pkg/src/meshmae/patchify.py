"""Token sequences from patch-structured meshes, and random masking."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mesh import FEATURE_DIM, face_centers, face_features, vertex_normals
from .remesh import RemeshError, TMesh


@dataclass(frozen=True)
class Patch:
    features: np.ndarray          # (64, 10), rank order
    center: np.ndarray            # (3,)
    relative_vertices: np.ndarray  # (45, 3)
    face_centers_rel: np.ndarray  # (64, 3)
    vertex_ids: np.ndarray        # (45,) global indices, ascending


@dataclass(frozen=True, eq=False)
class PatchSet:
    """All ``g`` patches of one mesh as stacked arrays.

    ``features`` is (g, 64, 10), ``centers`` (g, 3), ``relative_vertices``
    (g, 45, 3), ``face_centers_rel`` (g, 64, 3) and ``vertex_ids`` (g, 45).
    """

    features: np.ndarray
    centers: np.ndarray
    relative_vertices: np.ndarray
    face_centers_rel: np.ndarray
    vertex_ids: np.ndarray

    def __len__(self) -> int:
        return len(self.features)

    def __getitem__(self, i: int) -> Patch:
        return Patch(self.features[i], self.centers[i], self.relative_vertices[i],
                     self.face_centers_rel[i], self.vertex_ids[i])

    @property
    def face_centers(self) -> np.ndarray:
        return self.face_centers_rel + self.centers[:, None, :]

    def take(self, idx) -> "PatchSet":
        idx = np.asarray(idx)
        return PatchSet(self.features[idx], self.centers[idx], self.relative_vertices[idx],
                        self.face_centers_rel[idx], self.vertex_ids[idx])

    def with_face_order(self, perm: np.ndarray) -> "PatchSet":
        """Reorder the 64 face rows of every patch (``new[r] = old[perm[r]]``)."""
        perm = np.asarray(perm)
        return PatchSet(self.features[:, perm], self.centers, self.relative_vertices,
                        self.face_centers_rel[:, perm], self.vertex_ids)


def split_patches(tmesh: TMesh) -> PatchSet:
    """Per-patch features, centers and relative ground-truth vertices.

    Patch centers are the mean of the patch's face centroids; relative
    vertices are listed by ascending global vertex index.
    """
    k = tmesh.faces_per_patch
    n_faces = tmesh.mesh.n_faces
    if n_faces % k:
        raise RemeshError(f"{n_faces} faces is not a multiple of {k}")
    g = n_faces // k
    counts = np.bincount(tmesh.patch_id, minlength=g)
    if len(counts) != g or (counts != k).any():
        raise RemeshError(f"patches must hold exactly {k} faces")
    order = np.lexsort((tmesh.within_patch_rank, tmesh.patch_id))
    mesh = tmesh.mesh
    feats = face_features(mesh, vertex_normals(mesh))[order].reshape(g, k, FEATURE_DIM)
    fc = face_centers(mesh)[order].reshape(g, k, 3)
    centers = fc.mean(axis=1)
    pf = np.sort(mesh.faces[order].reshape(g, -1), axis=1)
    distinct = np.concatenate([np.ones((g, 1), bool), pf[:, 1:] != pf[:, :-1]], axis=1)
    n_unique = distinct.sum(axis=1)
    if (n_unique != n_unique[0]).any():
        raise RemeshError("patches differ in unique vertex count")
    vids = pf[distinct].reshape(g, -1)
    rel = mesh.vertices[vids] - centers[:, None, :]
    return PatchSet(feats.astype(np.float32), centers, rel, fc - centers[:, None, :], vids)


@dataclass(frozen=True)
class MaskPartition:
    masked_indices: np.ndarray
    visible_indices: np.ndarray
    ratio: float

    @property
    def size(self) -> int:
        return len(self.masked_indices) + len(self.visible_indices)


def n_masked(g: int, ratio: float) -> int:
    """round(ratio * g), halves rounded away from zero."""
    return int(np.floor(ratio * g + 0.5))


def make_mask(g: int, ratio: float, rng_seed: int | np.random.Generator) -> MaskPartition:
    """Uniform random subset of ``round(ratio * g)`` masked tokens."""
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"mask ratio must be in [0, 1), got {ratio}")
    if g < 1:
        raise ValueError("need at least one token")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    m = n_masked(g, ratio)
    perm = rng.permutation(g)
    return MaskPartition(np.sort(perm[:m]), np.sort(perm[m:]), float(ratio))


# ------------------------------------------------------------ export

def _write_blob(path: Path, arr: np.ndarray) -> None:
    header = np.array(arr.shape, dtype="<i4")
    with open(path, "wb") as fh:
        fh.write(header.tobytes())
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_blob(path: Path, ndim: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    shape = tuple(np.frombuffer(raw[:4 * ndim], dtype="<i4"))
    return np.frombuffer(raw[4 * ndim:], dtype="<f4").reshape(shape).copy()


def export_patches(patches: PatchSet, directory: str | Path, name: str = "mesh") -> Path:
    """Little-endian float32 blobs (int32 shape header) plus a JSON manifest."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    files = {
        "features": (f"{name}.features.bin", patches.features),
        "relative_vertices": (f"{name}.vertices.bin", patches.relative_vertices),
        "centers": (f"{name}.centers.bin", patches.centers),
    }
    for fname, arr in files.values():
        _write_blob(d / fname, arr)
    manifest = {
        "name": name,
        "patches": len(patches),
        "dtype": "float32-le",
        "header": "int32-le shape",
        "arrays": {k: {"file": f, "shape": list(a.shape)} for k, (f, a) in files.items()},
    }
    path = d / f"{name}.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def import_patches(manifest_path: str | Path) -> dict[str, np.ndarray]:
    manifest_path = Path(manifest_path)
    meta = json.loads(manifest_path.read_text())
    return {k: _read_blob(manifest_path.parent / v["file"], len(v["shape"]))
            for k, v in meta["arrays"].items()}
