"""Mesh Transformer encoder and the masked-autoencoder decoder.

Tokens are patches: a 640-dim concatenation of 64 face features, embedded by
an MLP, plus a positional embedding computed from patch geometry.  Blocks are
pre-norm ViT blocks.  During pretraining only visible tokens enter the
encoder; the decoder sees encoded visible tokens and a shared mask embedding
at masked slots, with positional embeddings added again to every slot.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import MLP, Buffer, LayerNorm, Linear, Module, parameter, trunc_normal
from .patchify import MaskPartition, PatchSet

POS_STRATEGIES = ("a_learnable", "b_per_face_maxpool", "c_flatten_64x3", "d_patch_center")


def resolve_strategy(name: str) -> str:
    for s in POS_STRATEGIES:
        if name == s or name == s[0]:
            return s
    raise ValueError(f"unknown positional strategy {name!r}; choose from {POS_STRATEGIES}")


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 128
    encoder_layers: int = 4
    decoder_layers: int = 2
    heads: int = 4
    mlp_ratio: float = 4.0
    pos_strategy: str = "d_patch_center"
    decoder_dim: int | None = None
    decoder_heads: int | None = None
    max_tokens: int = 256
    faces_per_patch: int = 64
    patch_vertices: int = 45
    feature_dim: int = 10
    standardize_features: bool = True

    def __post_init__(self):
        object.__setattr__(self, "pos_strategy", resolve_strategy(self.pos_strategy))
        if self.encoder_layers < 1 or self.decoder_layers < 1:
            raise ValueError("encoder and decoder need at least one layer")
        if self.embed_dim % self.heads:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.dec_dim % self.dec_heads:
            raise ValueError(f"decoder_dim {self.dec_dim} not divisible by {self.dec_heads} heads")
        if self.mlp_ratio <= 0:
            raise ValueError("mlp_ratio must be positive")

    @property
    def dec_dim(self) -> int:
        return self.decoder_dim or self.embed_dim

    @property
    def dec_heads(self) -> int:
        return self.decoder_heads or self.heads

    def to_dict(self) -> dict:
        return asdict(self)


def desk_config(**overrides) -> ModelConfig:
    return replace(ModelConfig(embed_dim=128, encoder_layers=4, decoder_layers=2, heads=4),
                   **overrides)


def paper_config(**overrides) -> ModelConfig:
    return replace(ModelConfig(embed_dim=768, encoder_layers=12, decoder_layers=6, heads=12),
                   **overrides)


class Attention(Module):
    def __init__(self, dim: int, heads: int, rng):
        self.heads = heads
        self.qkv = Linear(dim, 3 * dim, rng)
        self.proj = Linear(dim, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        t, d = x.shape
        h = self.heads
        dh = d // h
        qkv = self.qkv(x).reshape(t, 3, h, dh).transpose(1, 2, 0, 3)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = ad.matmul(q, k.transpose(0, 2, 1)) * (1.0 / np.sqrt(dh))
        out = ad.matmul(ad.softmax(scores, axis=-1), v)
        return self.proj(out.transpose(1, 0, 2).reshape(t, d))


class Block(Module):
    """Pre-norm transformer block."""

    def __init__(self, dim: int, heads: int, mlp_ratio: float, rng):
        self.norm1 = LayerNorm(dim)
        self.attn = Attention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.mlp = MLP(dim, int(dim * mlp_ratio), dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class PositionalEmbedding(Module):
    """Strategies a-d for turning patch geometry into a positional vector."""

    def __init__(self, strategy: str, dim: int, config: ModelConfig, rng):
        self.strategy = resolve_strategy(strategy)
        k = config.faces_per_patch
        if self.strategy == "a_learnable":
            self.table = parameter(trunc_normal(rng, (config.max_tokens, dim))
                                   if rng is not None else np.zeros((config.max_tokens, dim), np.float32))
        elif self.strategy == "c_flatten_64x3":
            self.mlp = MLP(3 * k, dim, dim, rng)
        else:
            self.mlp = MLP(3, dim, dim, rng)

    def __call__(self, patches: PatchSet, tokens: np.ndarray, dtype) -> Tensor:
        tokens = np.asarray(tokens, dtype=np.int64)
        if self.strategy == "a_learnable":
            if tokens.size and tokens.max() >= self.table.shape[0]:
                raise ValueError(f"{tokens.max() + 1} tokens exceed the learned table "
                                 f"({self.table.shape[0]} rows)")
            return ad.embedding_lookup(self.table, tokens)
        if self.strategy == "d_patch_center":
            return self.mlp(Tensor(patches.centers[tokens].astype(dtype)))
        fc = patches.face_centers[tokens].astype(dtype)
        if self.strategy == "c_flatten_64x3":
            return self.mlp(Tensor(fc.reshape(len(tokens), -1)))
        per_face = self.mlp(Tensor(fc))
        return per_face.max(axis=1)


class MeshTransformer(Module):
    """Patch embedding, positional embedding and the encoder stack."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator | None):
        d = config.embed_dim
        self.config = config
        self.patch_embed = MLP(config.faces_per_patch * config.feature_dim, d, d, rng)
        self.pos_embed = PositionalEmbedding(config.pos_strategy, d, config, rng)
        self.blocks = [Block(d, config.heads, config.mlp_ratio, rng)
                       for _ in range(config.encoder_layers)]
        self.norm = LayerNorm(d)
        fd = config.feature_dim
        self.feature_mean = Buffer(np.zeros(fd, np.float32))
        self.feature_std = Buffer(np.ones(fd, np.float32))
        self.feature_count = Buffer(np.zeros(1, np.float32))

    # per-channel standardization of the 10-dim face features
    @property
    def stats_fitted(self) -> bool:
        return bool(self.feature_count.data[0] > 0)

    def fit_feature_stats(self, features) -> None:
        """Set channel mean/std from an iterable of (..., feature_dim) arrays."""
        fd = self.config.feature_dim
        rows = np.concatenate([np.asarray(f, np.float64).reshape(-1, fd) for f in features])
        if not len(rows):
            raise ValueError("no faces to fit feature statistics on")
        dtype = self.feature_mean.dtype
        self.feature_mean.data = rows.mean(axis=0).astype(dtype)
        self.feature_std.data = np.maximum(rows.std(axis=0), 1e-8).astype(dtype)
        self.feature_count.data = np.array([len(rows)], dtype)

    def ensure_feature_stats(self, samples) -> None:
        """Fit statistics on ``samples`` unless already fitted or disabled."""
        if self.config.standardize_features and not self.stats_fitted:
            self.fit_feature_stats(s.patches.features for s in samples)

    def standardize(self, features: np.ndarray) -> np.ndarray:
        if not self.config.standardize_features:
            return np.asarray(features)
        f = np.asarray(features, np.float64)
        return ((f - self.feature_mean.data) / self.feature_std.data).astype(self.dtype)

    def embed_patches(self, features: np.ndarray) -> Tensor:
        """(g, 64, 10) -> (g, embed_dim); each row depends on its own patch only."""
        g = len(features)
        x = np.asarray(features, dtype=self.dtype).reshape(g, -1)
        if x.shape[1] != self.config.faces_per_patch * self.config.feature_dim:
            raise ad.ShapeError(f"embed_patches: expected (g, {self.config.faces_per_patch}, "
                                f"{self.config.feature_dim}) features, got {np.shape(features)}")
        return self.patch_embed(Tensor(x))

    def embed_positions(self, patches: PatchSet, tokens=None) -> Tensor:
        if tokens is None:
            tokens = np.arange(len(patches))
        return self.pos_embed(patches, tokens, self.dtype)

    def encode(self, x: Tensor) -> Tensor:
        for blk in self.blocks:
            x = blk(x)
        return self.norm(x)

    def __call__(self, patches: PatchSet, tokens=None, features=None) -> Tensor:
        """Encoded tokens ``H^L`` for ``tokens`` (default: all patches).

        ``features`` overrides ``patches.features`` (same shape), which is how
        face-order ablations feed permuted rows.
        """
        feats = patches.features if features is None else features
        if tokens is None:
            tokens = np.arange(len(patches))
        tokens = np.asarray(tokens, dtype=np.int64)
        x = self.embed_patches(self.standardize(feats[tokens])) + self.embed_positions(patches, tokens)
        return self.encode(x)


class MeshMAE(Module):
    """Encoder plus lightweight decoder with vertex and face-feature heads."""

    def __init__(self, config: ModelConfig, seed: int | None = 0):
        rng = np.random.default_rng(seed) if seed is not None else None
        self.config = config
        d, dd = config.embed_dim, config.dec_dim
        self.encoder = MeshTransformer(config, rng)
        if dd != d:
            self.decoder_embed = Linear(d, dd, rng)
            self.decoder_pos = PositionalEmbedding(config.pos_strategy, dd, config, rng)
        self.mask_token = parameter(trunc_normal(rng, (1, dd)) if rng is not None
                                    else np.zeros((1, dd), np.float32))
        self.decoder_blocks = [Block(dd, config.dec_heads, config.mlp_ratio, rng)
                               for _ in range(config.decoder_layers)]
        self.decoder_norm = LayerNorm(dd)
        self.vertex_head = Linear(dd, config.patch_vertices * 3, rng)
        self.face_head = Linear(dd, config.faces_per_patch * config.feature_dim, rng)

    def decoder_positions(self, patches: PatchSet) -> Tensor:
        tokens = np.arange(len(patches))
        if hasattr(self, "decoder_pos"):
            return self.decoder_pos(patches, tokens, self.dtype)
        # one positional MLP shared by encoder and decoder
        return self.encoder.embed_positions(patches, tokens)

    def decode(self, encoded: Tensor, mask: MaskPartition, positions: Tensor) -> tuple[Tensor, Tensor]:
        """Reassemble the full sequence and predict every slot.

        Returns (g, 45, 3) relative vertices and (g, 64, 10) face features.
        """
        vis, msk = mask.visible_indices, mask.masked_indices
        g = len(vis) + len(msk)
        h = self.decoder_embed(encoded) if hasattr(self, "decoder_embed") else encoded
        parts = [h] if len(vis) else []
        if len(msk):
            parts.append(ad.embedding_lookup(self.mask_token, np.zeros(len(msk), np.int64)))
        seq = ad.concat(parts, axis=0) if len(parts) > 1 else parts[0]
        slots = np.concatenate([vis, msk]).astype(np.int64)
        x = seq[np.argsort(slots)] + positions
        for blk in self.decoder_blocks:
            x = blk(x)
        x = self.decoder_norm(x)
        c = self.config
        verts = self.vertex_head(x).reshape(g, c.patch_vertices, 3)
        faces = self.face_head(x).reshape(g, c.faces_per_patch, c.feature_dim)
        return verts, faces

    def __call__(self, patches: PatchSet, mask: MaskPartition, features=None):
        """Pretraining forward pass.

        Returns ``(encoded_visible, pred_vertices, pred_faces)``; predictions
        cover all ``g`` slots in original order.
        """
        if len(mask.visible_indices) == 0:
            raise ValueError("at least one visible token is required")
        encoded = self.encoder(patches, mask.visible_indices, features)
        verts, faces = self.decode(encoded, mask, self.decoder_positions(patches))
        return encoded, verts, faces


def _block_params(d: int, mlp_ratio: float) -> int:
    h = int(d * mlp_ratio)
    return 4 * d + (d * 3 * d + 3 * d) + (d * d + d) + (d * h + h) + (h * d + d)


def _pos_params(strategy: str, d: int, config: ModelConfig) -> int:
    if strategy == "a_learnable":
        return config.max_tokens * d
    d_in = 3 * config.faces_per_patch if strategy == "c_flatten_64x3" else 3
    return d_in * d + d + d * d + d


def expected_parameter_count(config: ModelConfig) -> int:
    """Closed-form parameter count of :class:`MeshMAE` for ``config``."""
    d, dd = config.embed_dim, config.dec_dim
    k_in = config.faces_per_patch * config.feature_dim
    enc = (k_in * d + d + d * d + d) + _pos_params(config.pos_strategy, d, config)
    enc += config.encoder_layers * _block_params(d, config.mlp_ratio) + 2 * d
    dec = dd + config.decoder_layers * _block_params(dd, config.mlp_ratio) + 2 * dd
    dec += dd * config.patch_vertices * 3 + config.patch_vertices * 3
    dec += dd * k_in + k_in
    if dd != d:
        dec += d * dd + dd + _pos_params(config.pos_strategy, dd, config)
    return enc + dec
