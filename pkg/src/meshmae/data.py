"""Training samples built from preprocessed t-meshes."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mesh import normalize_mesh
from .patchify import PatchSet, split_patches
from .remesh import TMesh, child_order_permutation, read_tmesh

MANIFEST = "manifest.json"
FACE_ORDERS = ("original", "rotate-l", "rotate-r", "random")


@dataclass(eq=False)
class Sample:
    name: str
    tmesh: TMesh
    patches: PatchSet
    label: int | None = None
    # per t-mesh face, in the mesh's storage order
    face_labels: np.ndarray | None = None

    @property
    def patch_face_labels(self) -> np.ndarray:
        """(g, 64) face labels aligned with ``patches.features`` rows."""
        if self.face_labels is None:
            raise ValueError(f"{self.name} has no face labels")
        order = np.lexsort((self.tmesh.within_patch_rank, self.tmesh.patch_id))
        return self.face_labels[order].reshape(len(self.patches), -1)


def prepare_sample(tmesh: TMesh, name: str = "mesh", label: int | None = None,
                   face_labels: np.ndarray | None = None) -> Sample:
    """Normalize into the unit sphere and split into patches."""
    tm = tmesh.with_mesh(normalize_mesh(tmesh.mesh))
    if face_labels is not None:
        face_labels = np.asarray(face_labels, dtype=np.int64)
        if len(face_labels) != tm.mesh.n_faces:
            raise ValueError(f"{name}: {len(face_labels)} labels for {tm.mesh.n_faces} faces")
    return Sample(name, tm, split_patches(tm), label, face_labels)


def load_samples(root: str | Path, split: str | None = None,
                 classes: list[str] | None = None) -> tuple[list[Sample], list[str]]:
    """Read a preprocessed directory (see ``meshmae preprocess``).

    Returns the samples and the sorted class names used for label ids.
    """
    root = Path(root)
    meta = json.loads((root / MANIFEST).read_text())
    entries = [e for e in meta["meshes"] if split is None or e["split"] == split]
    if classes is None:
        classes = sorted({e["class"] for e in meta["meshes"]})
    index = {c: i for i, c in enumerate(classes)}
    samples = []
    for e in entries:
        path = root / e["path"]
        tm = read_tmesh(path)
        labels_path = path.with_suffix(".labels")
        labels = np.loadtxt(labels_path, dtype=np.int64).reshape(-1) if labels_path.exists() else None
        samples.append(prepare_sample(tm, e["path"], index.get(e["class"]), labels))
    return samples, classes


def face_order_permutation(order: str, times: int = 3, seed: int = 0) -> np.ndarray:
    """Within-patch face order as ``perm[new_rank] = canonical_rank``.

    ``rotate-l``/``rotate-r`` start the subdivision from the base face's
    second/third corner; ``random`` is one seeded shuffle shared by all patches.
    """
    k = 4 ** times
    if order == "original":
        return np.arange(k)
    if order == "rotate-l":
        return child_order_permutation(times, 1)
    if order == "rotate-r":
        return child_order_permutation(times, 2)
    if order == "random":
        return np.random.default_rng([seed, 5]).permutation(k)
    raise ValueError(f"unknown face order {order!r}; choose from {FACE_ORDERS}")


def reorder_faces(sample: Sample, perm: np.ndarray) -> Sample:
    """Permute face rows inside every patch (inputs and targets alike).

    Within-patch ranks are rewritten so face labels keep following their faces.
    """
    perm = np.asarray(perm)
    tm = sample.tmesh
    rank = np.argsort(perm)[tm.within_patch_rank]
    tm = TMesh(tm.mesh, tm.patch_id, rank, tm.subdivision_level)
    return Sample(sample.name, tm, sample.patches.with_face_order(perm), sample.label,
                  sample.face_labels)
