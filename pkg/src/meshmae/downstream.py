"""Classification and part segmentation on top of the mesh encoder."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from . import autodiff as ad
from .autodiff import Tensor
from .data import Sample
from .mesh import Mesh, face_centers
from .nn import MLP, Buffer, Linear, Module
from .optim import AdamW, step_lr
from .patchify import PatchSet
from .remesh import TMesh
from .transformer import MeshTransformer, ModelConfig

FACE_EMBED_DIM = 64
AUX_WEIGHT = 0.5
MILESTONES = {"cls": (0.3, 0.6), "seg": (0.4, 0.8)}


# ------------------------------------------------------------ models

class Classifier(Module):
    """Encoder, max-pool over tokens, linear classifier.

    The pooled vector is standardized per dimension before the linear layer.
    The statistics are buffers refit on the training split (see
    :func:`finetune`), so at inference the logits stay an affine map of the
    max-pool.
    """

    def __init__(self, config: ModelConfig, n_classes: int, seed: int | None = 0):
        rng = np.random.default_rng(seed) if seed is not None else None
        d = config.embed_dim
        self.config = config
        self.n_classes = n_classes
        self.encoder = MeshTransformer(config, rng)
        self.head = Linear(d, n_classes, rng)
        self.pool_mean = Buffer(np.zeros(d, np.float32))
        self.pool_std = Buffer(np.ones(d, np.float32))

    def pooled(self, patches: PatchSet, features=None) -> Tensor:
        return self.encoder(patches, features=features).max(axis=0)

    def fit_pool_stats(self, samples: Sequence[Sample]) -> None:
        with ad.no_grad():
            x = np.stack([self.pooled(s.patches).data for s in samples]).astype(np.float64)
        self.pool_mean.data = x.mean(axis=0).astype(np.float32)
        self.pool_std.data = np.maximum(x.std(axis=0), 1e-6).astype(np.float32)

    def __call__(self, patches: PatchSet, features=None) -> Tensor:
        z = (self.pooled(patches, features) - self.pool_mean.data) * (1.0 / self.pool_std.data)
        return self.head(z.reshape(1, -1)).reshape(-1)


class Segmenter(Module):
    """Encoder with a patch-level head and a face-level head.

    Head 1 scores each token; head 2 scores each face from its token
    embedding concatenated with an embedding of the face's own features.
    """

    def __init__(self, config: ModelConfig, n_parts: int, seed: int | None = 0):
        rng = np.random.default_rng(seed) if seed is not None else None
        d = config.embed_dim
        self.config = config
        self.n_parts = n_parts
        self.encoder = MeshTransformer(config, rng)
        self.face_embed = Linear(config.feature_dim, FACE_EMBED_DIM, rng)
        self.head1 = Linear(d, n_parts, rng)
        self.head2 = MLP(d + FACE_EMBED_DIM, d, n_parts, rng)

    def __call__(self, patches: PatchSet, features=None) -> tuple[Tensor, Tensor]:
        """Patch logits (g, P) and face logits (g * 64, P) in patch-major rank order."""
        feats = patches.features if features is None else features
        g, k, _ = feats.shape
        h = self.encoder(patches, features=feats)
        patch_logits = self.head1(h)
        tokens = h.reshape(g, 1, -1) + np.zeros((1, k, 1), dtype=self.dtype)
        faces = ad.gelu(self.face_embed(Tensor(self.encoder.standardize(feats))))
        fused = ad.concat([tokens, faces], axis=-1)
        face_logits = self.head2(fused).reshape(g * k, self.n_parts)
        return patch_logits, face_logits


def init_from_pretrained(model: Classifier | Segmenter, state: dict[str, np.ndarray]) -> list[str]:
    """Copy ``encoder.*`` weights of a pretrained :class:`MeshMAE` state."""
    sub = {k[len("encoder."):]: v for k, v in state.items() if k.startswith("encoder.")}
    return model.encoder.load_state_dict(sub, strict=True)


def checksum(module: Module) -> str:
    h = hashlib.sha256()
    for name, p in module.named_parameters():
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()


# ------------------------------------------------------------ inference

def classify(model: Classifier, sample: Sample | PatchSet, features=None) -> np.ndarray:
    patches = sample.patches if isinstance(sample, Sample) else sample
    with ad.no_grad():
        return model(patches, features).data.astype(np.float64)


def segment(model: Segmenter, sample: Sample) -> np.ndarray:
    """Per-face logits in the t-mesh's storage order."""
    with ad.no_grad():
        _, logits = model(sample.patches)
    tm = sample.tmesh
    order = np.lexsort((tm.within_patch_rank, tm.patch_id))
    out = np.empty_like(logits.data, dtype=np.float64)
    out[order] = logits.data
    return out


def patch_majority(face_labels: np.ndarray) -> np.ndarray:
    """(g, 64) labels -> per-patch majority label, ties to the smallest id."""
    labels = np.asarray(face_labels)
    n = int(labels.max()) + 1 if labels.size else 1
    counts = np.stack([(labels == c).sum(axis=1) for c in range(n)], axis=1)
    return counts.argmax(axis=1)


# ------------------------------------------------------------ metrics

def evaluate(predictions, labels, task: str = "cls") -> float:
    """Accuracy in percent; segmentation counts faces across all meshes."""
    if task not in ("cls", "seg"):
        raise ValueError(f"unknown task {task!r}")
    if task == "seg" and len(predictions) and np.ndim(predictions[0]) > 0:
        if len(predictions) != len(labels):
            raise ValueError(f"{len(predictions)} predicted meshes vs {len(labels)} labelled")
        predictions = np.concatenate([np.ravel(p) for p in predictions])
        labels = np.concatenate([np.ravel(t) for t in labels])
    p = np.asarray(predictions).ravel()
    t = np.asarray(labels).ravel()
    if len(p) != len(t):
        raise ValueError(f"{len(p)} predictions vs {len(t)} labels")
    if len(p) == 0:
        raise ValueError("nothing to evaluate")
    return float((p == t).mean() * 100.0)


def accuracy(model: Classifier | Segmenter, samples: Sequence[Sample]) -> float:
    if isinstance(model, Segmenter):
        preds = [segment(model, s).argmax(1) for s in samples]
        return evaluate(preds, [s.face_labels for s in samples], "seg")
    preds = [classify(model, s).argmax() for s in samples]
    return evaluate(preds, [s.label for s in samples], "cls")


# ------------------------------------------------------------ training

@dataclass
class FinetuneConfig:
    epochs: int = 10
    lr: float = 1e-4
    weight_decay: float = 0.05
    batch_size: int = 32
    seed: int = 0
    milestones: tuple[float, ...] | None = None   # fractions of ``epochs``

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be at least 1")
        if self.lr < 0 or self.weight_decay < 0:
            raise ValueError("lr and weight_decay must be non-negative")

    def milestone_epochs(self, task: str) -> list[int]:
        fracs = self.milestones if self.milestones is not None else MILESTONES[task]
        return [max(1, round(f * self.epochs)) for f in fracs]


@dataclass
class FinetuneResult:
    train_loss: list[float] = field(default_factory=list)
    test_accuracy: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)


def _sample_loss(model, sample: Sample) -> Tensor:
    if isinstance(model, Segmenter):
        patch_logits, face_logits = model(sample.patches)
        labels = sample.patch_face_labels
        return (ad.cross_entropy(face_logits, labels.reshape(-1))
                + ad.cross_entropy(patch_logits, patch_majority(labels)) * AUX_WEIGHT)
    logits = model(sample.patches).reshape(1, -1)
    return ad.cross_entropy(logits, [sample.label])


def finetune(model: Classifier | Segmenter, train: Sequence[Sample],
             config: FinetuneConfig = FinetuneConfig(),
             test: Sequence[Sample] | None = None) -> FinetuneResult:
    """End-to-end supervised training with step decay (x0.1 at the milestones).

    A classifier's pooled-feature statistics are refit on ``train`` at the
    start of every epoch.  When ``test`` is given, accuracy is recorded after
    every epoch.
    """
    task = "seg" if isinstance(model, Segmenter) else "cls"
    model.encoder.ensure_feature_stats(train)
    params = [p for p in model.parameters() if p.requires_grad]
    opt = AdamW(params, lr=config.lr, weight_decay=config.weight_decay, schedule=None)
    rng = np.random.default_rng([config.seed, 3])
    milestones = config.milestone_epochs(task)
    result = FinetuneResult()
    for epoch in range(config.epochs):
        opt.state.lr = step_lr(config.lr, epoch, milestones)
        result.lr.append(opt.state.lr)
        if task == "cls":
            model.fit_pool_stats(train)
        perm = rng.permutation(len(train))
        losses = []
        for start in range(0, len(perm), config.batch_size):
            chosen = [train[i] for i in perm[start:start + config.batch_size]]
            opt.zero_grad()
            for s in chosen:
                loss = _sample_loss(model, s)
                ad.backward(loss * (1.0 / len(chosen)))
                losses.append(loss.item())
            if not np.isfinite(losses[-1]):
                raise FloatingPointError(f"non-finite fine-tuning loss at epoch {epoch}")
            opt.step()
        result.train_loss.append(float(np.mean(losses)))
        if test is not None:
            result.test_accuracy.append(accuracy(model, test))
    return result


# ------------------------------------------------------------ linear probe

@dataclass
class ProbeResult:
    head: Linear
    mean: np.ndarray
    std: np.ndarray
    train_accuracy: float
    test_accuracy: float
    backbone_before: str
    backbone_after: str

    @property
    def head_parameters(self) -> int:
        return self.head.num_parameters()

    def predict(self, pooled: np.ndarray) -> np.ndarray:
        z = (np.asarray(pooled) - self.mean) / self.std
        with ad.no_grad():
            return self.head(Tensor(z.astype(np.float32))).data.argmax(axis=1)


def pooled_features(encoder: MeshTransformer, samples: Sequence[Sample]) -> np.ndarray:
    """Max-pooled encoder outputs, one row per sample."""
    out = []
    with ad.no_grad():
        for s in samples:
            out.append(encoder(s.patches).data.max(axis=0))
    return np.stack(out).astype(np.float64)


def linear_probe(encoder: MeshTransformer, train: Sequence[Sample], test: Sequence[Sample],
                 n_classes: int, epochs: int = 200, lr: float = 1e-2,
                 weight_decay: float = 0.0, seed: int = 0) -> ProbeResult:
    """Train only a linear head on frozen, max-pooled encoder features.

    Features are standardized with training-set statistics (a parameter-free
    normalization, as a non-affine batch norm would do at inference).
    """
    encoder.ensure_feature_stats(train)
    before = checksum(encoder)
    xtr = pooled_features(encoder, train)
    xte = pooled_features(encoder, test)
    ytr = np.array([s.label for s in train])
    yte = np.array([s.label for s in test])
    mean = xtr.mean(axis=0)
    std = xtr.std(axis=0) + 1e-6
    ztr = Tensor(((xtr - mean) / std).astype(np.float32))
    head = Linear(encoder.config.embed_dim, n_classes, np.random.default_rng([seed, 4]))
    opt = AdamW(head.parameters(), lr=lr, weight_decay=weight_decay, horizon=epochs)
    for _ in range(epochs):
        opt.zero_grad()
        ad.backward(ad.cross_entropy(head(ztr), ytr))
        opt.step()
    result = ProbeResult(head, mean, std, 0.0, 0.0, before, checksum(encoder))
    result.train_accuracy = evaluate(result.predict(xtr), ytr)
    result.test_accuracy = evaluate(result.predict(xte), yte) if len(test) else float("nan")
    return result


# ------------------------------------------------------------ label transfer

def transfer_labels(raw: Mesh, raw_labels: np.ndarray, target: Mesh | TMesh) -> np.ndarray:
    """Label each target face with the label of the nearest raw face (centroids).

    Ties go to the lowest raw face index.
    """
    raw_labels = np.asarray(raw_labels)
    if raw.n_faces == 0:
        raise ValueError("raw mesh has no faces")
    if len(raw_labels) != raw.n_faces:
        raise ValueError(f"{len(raw_labels)} labels for {raw.n_faces} raw faces")
    mesh = target.mesh if isinstance(target, TMesh) else target
    src = face_centers(raw)
    q = face_centers(mesh)
    tree = cKDTree(src)
    k = min(4, len(src))
    dist, idx = tree.query(q, k=k)
    dist = dist.reshape(len(q), k)
    idx = idx.reshape(len(q), k)
    tied = dist == dist[:, :1]
    best = np.where(tied, idx, np.iinfo(np.int64).max).min(axis=1)
    # k nearest all tied: there may be more candidates at the same distance
    for i in np.flatnonzero(tied.all(axis=1) & (k < len(src))):
        cand = np.asarray(tree.query_ball_point(q[i], dist[i, 0] * (1 + 1e-12) + 1e-300))
        d = np.linalg.norm(src[cand] - q[i], axis=1)
        best[i] = cand[d == d.min()].min()
    return raw_labels[best]
