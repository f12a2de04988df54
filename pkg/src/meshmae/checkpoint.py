"""Weight files: a small header, the model config as JSON, then named float32 tensors.

Layout (little-endian)::

    b"MMAE" | u32 version | u32 json_len | json | u32 n_tensors |
    per tensor: u32 name_len | name | u32 ndim | u32 dims... | float32 data
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .downstream import Classifier, Segmenter
from .nn import Module
from .transformer import MeshMAE, ModelConfig

MAGIC = b"MMAE"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray], meta: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = json.dumps(meta, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(blob)), blob, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        key = name.encode()
        parts.append(struct.pack("<I", len(key)) + key)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    path.write_bytes(b"".join(parts))
    return path


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, n = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    off = 12
    meta = json.loads(raw[off:off + n])
    off += n
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    tensors = {}
    try:
        for _ in range(count):
            (k,) = struct.unpack_from("<I", raw, off)
            name = raw[off + 4:off + 4 + k].decode()
            off += 4 + k
            (ndim,) = struct.unpack_from("<I", raw, off)
            shape = struct.unpack_from(f"<{ndim}I", raw, off + 4)
            off += 4 + 4 * ndim
            size = int(np.prod(shape, dtype=np.int64))
            tensors[name] = np.frombuffer(raw, "<f4", size, off).reshape(shape).astype(np.float32)
            off += 4 * size
    except (struct.error, ValueError) as e:
        raise CheckpointError(f"{path}: truncated checkpoint") from e
    return tensors, meta


def _kind(model: Module) -> str:
    if isinstance(model, MeshMAE):
        return "mae"
    if isinstance(model, Classifier):
        return "cls"
    if isinstance(model, Segmenter):
        return "seg"
    raise TypeError(f"cannot checkpoint {type(model).__name__}")


def save_model(path: str | Path, model: Module, extra: dict | None = None) -> Path:
    """Weights plus what is needed to rebuild ``model`` (kind, config, head size)."""
    meta = {"kind": _kind(model), "model": model.config.to_dict(), **(extra or {})}
    if isinstance(model, Classifier):
        meta["n_outputs"] = model.n_classes
    elif isinstance(model, Segmenter):
        meta["n_outputs"] = model.n_parts
    return save_checkpoint(path, model.state_dict(), meta)


def load_model(path: str | Path) -> tuple[Module, dict]:
    tensors, meta = load_checkpoint(path)
    try:
        config = ModelConfig(**meta["model"])
        kind = meta.get("kind", "mae")
        if kind == "mae":
            model: Module = MeshMAE(config, seed=None)
        elif kind == "cls":
            model = Classifier(config, meta["n_outputs"], seed=None)
        elif kind == "seg":
            model = Segmenter(config, meta["n_outputs"], seed=None)
        else:
            raise CheckpointError(f"{path}: unknown model kind {kind!r}")
        model.load_state_dict(tensors)
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, CheckpointError):
            raise
        raise CheckpointError(f"{path}: {e}") from e
    return model, meta
