"""Masked mesh modeling: losses, the training loop and reconstruction export."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Sample
from .mesh import Mesh, write_mesh, write_point_cloud
from .optim import AdamW
from .patchify import MaskPartition, PatchSet, make_mask, n_masked
from .transformer import MeshMAE

LOG_FIELDS = ("step", "lr", "loss", "chamfer", "mse")


class NonFiniteLossError(FloatingPointError):
    """Raised when a training loss is NaN or infinite; carries a diagnostic dict."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


# ------------------------------------------------------------ losses

def chamfer_l2(pred: np.ndarray, target: np.ndarray) -> float:
    """Symmetric mean nearest-neighbour squared distance between two point sets."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.ndim != 2 or t.ndim != 2 or len(p) == 0 or len(t) == 0:
        raise ValueError("chamfer_l2 needs two non-empty (n, d) point sets")
    d = ((p[:, None, :] - t[None, :, :]) ** 2).sum(-1)
    return float(d.min(axis=1).mean() + d.min(axis=0).mean())


def face_mse(pred: np.ndarray, target: np.ndarray) -> float:
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"face_mse: shape {p.shape} != {t.shape}")
    return float(((p - t) ** 2).mean())


def chamfer_tokens(pred: Tensor, target: np.ndarray) -> Tensor:
    """Per-token Chamfer for (m, n, 3) predictions against (m, n', 3) targets."""
    m, n, _ = pred.shape
    tgt = np.asarray(target, dtype=pred.dtype)
    diff = pred.reshape(m, n, 1, 3) - tgt[:, None, :, :]
    d = (diff * diff).sum(axis=-1)
    return d.min(axis=2).mean(axis=1) + d.min(axis=1).mean(axis=1)


def mse_tokens(pred: Tensor, target: np.ndarray) -> Tensor:
    """Per-token mean squared error over all face-feature entries."""
    m = pred.shape[0]
    diff = pred.reshape(m, -1) - np.asarray(target, dtype=pred.dtype).reshape(m, -1)
    return (diff * diff).mean(axis=1)


@dataclass
class LossParts:
    total: Tensor
    chamfer: float
    mse: float


def total_loss(pred_vertices: Tensor, pred_faces: Tensor, patches: PatchSet,
               mask: MaskPartition, lam: float = 0.5,
               face_targets: np.ndarray | None = None) -> LossParts:
    """Mean over masked tokens of ``face_mse + lam * chamfer``.

    Only masked rows of the predictions are read.  An empty mask gives a
    zero loss with a warning.  ``face_targets`` defaults to the raw patch
    features; models that standardize their inputs pass the standardized ones.
    """
    msk = np.asarray(mask.masked_indices, dtype=np.int64)
    if len(msk) == 0:
        warnings.warn("empty mask: loss defined as 0", RuntimeWarning, stacklevel=2)
        zero = (pred_faces.reshape(-1)[0:1] * 0.0).sum()
        return LossParts(zero, 0.0, 0.0)
    cd = chamfer_tokens(pred_vertices[msk], patches.relative_vertices[msk])
    targets = patches.features if face_targets is None else face_targets
    mse = mse_tokens(pred_faces[msk], targets[msk])
    loss = (mse + cd * lam).mean()
    return LossParts(loss, float(cd.data.mean()), float(mse.data.mean()))


# ------------------------------------------------------------ batches and steps

@dataclass(frozen=True, eq=False)
class PretrainBatch:
    """One mesh's tokens and its mask partition."""

    patches: PatchSet
    mask: MaskPartition
    mesh_id: str = "mesh"

    def __post_init__(self):
        g = len(self.patches)
        p = self.patches
        if p.centers.shape != (g, 3) or p.relative_vertices.shape[0] != g:
            raise ValueError(f"{self.mesh_id}: inconsistent patch arrays")
        if self.mask.size != g:
            raise ValueError(f"{self.mesh_id}: mask covers {self.mask.size} of {g} tokens")
        if len(self.mask.masked_indices) != n_masked(g, self.mask.ratio):
            raise ValueError(f"{self.mesh_id}: mask size breaks the ratio law")

    @property
    def features(self) -> np.ndarray:
        return self.patches.features

    @property
    def centers(self) -> np.ndarray:
        return self.patches.centers

    @property
    def relative_vertices(self) -> np.ndarray:
        return self.patches.relative_vertices


@dataclass
class StepStats:
    step: int
    lr: float
    loss: float
    chamfer: float
    mse: float


def _diagnostics(model: MeshMAE, batch: Sequence[PretrainBatch], step: int) -> dict:
    norms = {k: float(np.linalg.norm(p.data)) for k, p in model.named_parameters()}
    bad = [k for k, p in model.named_parameters() if not np.isfinite(p.data).all()]
    return {"step": step, "meshes": [b.mesh_id for b in batch],
            "nonfinite_parameters": bad, "parameter_norms": norms}


def train_step(model: MeshMAE, optimizer: AdamW, batch: Sequence[PretrainBatch],
               lam: float = 0.5) -> StepStats:
    """Forward, backward and one optimizer update; loss averaged over meshes."""
    optimizer.zero_grad()
    step = optimizer.state.step
    lr = optimizer.current_lr()
    totals = np.zeros(3)
    for b in batch:
        _, verts, faces = model(b.patches, b.mask)
        parts = total_loss(verts, faces, b.patches, b.mask, lam,
                           model.encoder.standardize(b.patches.features))
        value = parts.total.item()
        if not math.isfinite(value):
            diag = _diagnostics(model, batch, step)
            diag["failing_mesh"] = b.mesh_id
            raise NonFiniteLossError(f"non-finite loss {value} at step {step} ({b.mesh_id})", diag)
        ad.backward(parts.total * (1.0 / len(batch)))
        totals += (value, parts.chamfer, parts.mse)
    optimizer.step()
    loss, cd, mse = totals / len(batch)
    return StepStats(step, lr, float(loss), float(cd), float(mse))


# ------------------------------------------------------------ training loop

@dataclass
class PretrainConfig:
    mask_ratio: float = 0.5
    lam: float = 0.5
    lr: float = 1e-4
    weight_decay: float = 0.05
    batch_size: int = 32
    epochs: int = 1
    max_steps: int | None = None
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.mask_ratio < 1.0:
            raise ValueError(f"mask_ratio must be in (0, 1), got {self.mask_ratio}")
        if self.lam < 0 or self.lr < 0 or self.weight_decay < 0:
            raise ValueError("lam, lr and weight_decay must be non-negative")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be at least 1")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError("max_steps must be positive")

    def horizon(self, n_samples: int) -> int:
        total = self.epochs * math.ceil(n_samples / self.batch_size)
        return min(total, self.max_steps) if self.max_steps else total


@dataclass
class PretrainResult:
    trace: list[StepStats] = field(default_factory=list)

    @property
    def losses(self) -> list[float]:
        return [s.loss for s in self.trace]


def pretrain(model: MeshMAE, samples: Sequence[Sample], config: PretrainConfig = PretrainConfig(),
             log_path: str | Path | None = None,
             callback: Callable[[StepStats], None] | None = None) -> PretrainResult:
    """Masked-autoencoder pretraining with AdamW and a cosine schedule.

    Data order and masks come from two RNG streams derived from ``config.seed``.
    A CSV log (step, lr, loss, chamfer, mse) is written when ``log_path`` is set.
    """
    if not samples:
        raise ValueError("no training samples")
    model.encoder.ensure_feature_stats(samples)
    order_rng = np.random.default_rng([config.seed, 1])
    mask_rng = np.random.default_rng([config.seed, 2])
    horizon = config.horizon(len(samples))
    opt = AdamW(model.parameters(), lr=config.lr, weight_decay=config.weight_decay,
                horizon=horizon)
    result = PretrainResult()
    writer = None
    fh = None
    if log_path is not None:
        fh = open(log_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(LOG_FIELDS)
    try:
        while opt.state.step < horizon:
            perm = order_rng.permutation(len(samples))
            for start in range(0, len(perm), config.batch_size):
                if opt.state.step >= horizon:
                    break
                chosen = [samples[i] for i in perm[start:start + config.batch_size]]
                batch = [PretrainBatch(s.patches, make_mask(len(s.patches), config.mask_ratio, mask_rng),
                                       s.name) for s in chosen]
                stats = train_step(model, opt, batch, config.lam)
                result.trace.append(stats)
                if writer is not None:
                    writer.writerow([stats.step, f"{stats.lr:.8g}", f"{stats.loss:.8g}",
                                     f"{stats.chamfer:.8g}", f"{stats.mse:.8g}"])
                if callback is not None:
                    callback(stats)
    finally:
        if fh is not None:
            fh.close()
    return result


def evaluate_loss(model: MeshMAE, samples: Sequence[Sample], ratio: float = 0.5,
                  lam: float = 0.5, seed: int = 0) -> StepStats:
    """Mean loss over ``samples`` with fixed seeded masks and no update."""
    rng = np.random.default_rng(seed)
    totals = np.zeros(3)
    with ad.no_grad():
        for s in samples:
            mask = make_mask(len(s.patches), ratio, rng)
            _, verts, faces = model(s.patches, mask)
            parts = total_loss(verts, faces, s.patches, mask, lam,
                               model.encoder.standardize(s.patches.features))
            totals += (parts.total.item(), parts.chamfer, parts.mse)
    loss, cd, mse = totals / len(samples)
    return StepStats(-1, 0.0, float(loss), float(cd), float(mse))


def dump_diagnostics(err: NonFiniteLossError, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(err.diagnostics, indent=2))
    return path


# ------------------------------------------------------------ reconstruction

@dataclass
class Reconstruction:
    mean_chamfer: float
    per_patch: np.ndarray
    predicted: np.ndarray     # (m, 45, 3) absolute coordinates
    ground_truth: np.ndarray  # (m, 45, 3)
    mask: MaskPartition
    paths: dict[str, Path] = field(default_factory=dict)


def reconstruct(model: MeshMAE, sample: Sample, ratio: float = 0.5,
                seed: int | np.random.Generator = 0) -> Reconstruction:
    """Predict masked-patch vertices; Chamfer is measured in relative coordinates."""
    patches = sample.patches
    mask = make_mask(len(patches), ratio, seed)
    with ad.no_grad():
        _, verts, _ = model(patches, mask)
    msk = mask.masked_indices
    pred_rel = verts.data[msk].astype(np.float64)
    gt_rel = patches.relative_vertices[msk]
    per = np.array([chamfer_l2(p, t) for p, t in zip(pred_rel, gt_rel)])
    centers = patches.centers[msk][:, None, :]
    return Reconstruction(float(per.mean()) if len(per) else 0.0, per,
                          pred_rel + centers, gt_rel + centers, mask)


def reconstruction_error(model: MeshMAE, samples: Sequence[Sample], ratio: float = 0.5,
                         seed: int = 0) -> float:
    """Mean masked-patch Chamfer over ``samples`` with seeded masks."""
    rng = np.random.default_rng(seed)
    return float(np.mean([reconstruct(model, s, ratio, rng).mean_chamfer for s in samples]))


def export_reconstruction(model: MeshMAE, sample: Sample, out_dir: str | Path,
                          ratio: float = 0.5, seed: int = 0,
                          name: str | None = None) -> Reconstruction:
    """Write predicted and ground-truth masked vertices plus the visible patches.

    Files: ``<name>_r<ratio>_pred.obj`` and ``_gt.obj`` (vertex-only point
    clouds) and ``_visible.obj`` (the visible patches as a mesh).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    name = name or Path(sample.name).stem
    rec = reconstruct(model, sample, ratio, seed)
    stem = f"{name}_r{ratio:g}"
    rec.paths["pred"] = write_point_cloud(rec.predicted.reshape(-1, 3), out / f"{stem}_pred.obj")
    rec.paths["gt"] = write_point_cloud(rec.ground_truth.reshape(-1, 3), out / f"{stem}_gt.obj")
    tm = sample.tmesh
    keep = np.isin(tm.patch_id, rec.mask.visible_indices)
    faces = tm.mesh.faces[keep]
    used, inverse = np.unique(faces, return_inverse=True)
    visible = Mesh(tm.mesh.vertices[used], inverse.reshape(-1, 3))
    rec.paths["visible"] = write_mesh(visible, out / f"{stem}_visible.obj")
    summary = {"mesh": sample.name, "ratio": ratio, "seed": seed,
               "mean_chamfer": rec.mean_chamfer, "masked": rec.mask.masked_indices.tolist()}
    rec.paths["summary"] = out / f"{stem}.json"
    rec.paths["summary"].write_text(json.dumps(summary, indent=2))
    return rec

