"""Run configuration: TOML sections mapped onto the module config dataclasses."""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .augment import AugmentConfig
from .data import FACE_ORDERS
from .remesh import RemeshConfig
from .transformer import ModelConfig, desk_config, paper_config

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PretrainSection:
    mask_ratio: float = 0.5
    lam: float = 0.5
    lr: float = 1e-4
    weight_decay: float = 0.05
    batch_size: int = 32
    epochs: int = 1
    max_steps: int | None = None


@dataclass(frozen=True)
class FinetuneSection:
    epochs: int = 10
    lr: float = 1e-4
    weight_decay: float = 0.05
    batch_size: int = 32
    face_order: str = "original"


@dataclass(frozen=True)
class ProbeSection:
    epochs: int = 200
    lr: float = 1e-2
    weight_decay: float = 0.0


@dataclass(frozen=True)
class RemeshSection:
    min_faces: int = 96
    max_faces: int = 256
    input_faces: int = 500
    times: int = 3
    variants: int = 1
    workers: int = 1


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    model: ModelConfig = field(default_factory=desk_config)
    remesh: RemeshSection = RemeshSection()
    pretrain: PretrainSection = PretrainSection()
    finetune: FinetuneSection = FinetuneSection()
    probe: ProbeSection = ProbeSection()
    aug: AugmentConfig = AugmentConfig()

    def __post_init__(self):
        _validate(self)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def remesh_config(self, seed: int = 0) -> RemeshConfig:
        r = self.remesh
        return RemeshConfig(min_faces=r.min_faces, max_faces=r.max_faces,
                            input_faces=r.input_faces, times=r.times, seed=seed)


def _check(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def _validate(c: RunConfig) -> None:
    p, f, pr, r = c.pretrain, c.finetune, c.probe, c.remesh
    _check(0.0 < p.mask_ratio < 1.0, f"pretrain.mask_ratio {p.mask_ratio} not in (0, 1)")
    _check(p.lam >= 0, "pretrain.lam must be >= 0")
    for name, sec in (("pretrain", p), ("finetune", f), ("probe", pr)):
        _check(sec.lr >= 0, f"{name}.lr must be >= 0")
        _check(sec.weight_decay >= 0, f"{name}.weight_decay must be >= 0")
        _check(sec.epochs >= 1, f"{name}.epochs must be >= 1")
    for name, sec in (("pretrain", p), ("finetune", f)):
        _check(sec.batch_size >= 1, f"{name}.batch_size must be >= 1")
    _check(p.max_steps is None or p.max_steps >= 1, "pretrain.max_steps must be >= 1")
    _check(f.face_order in FACE_ORDERS, f"finetune.face_order must be one of {FACE_ORDERS}")
    _check(1 <= r.variants <= 100, "remesh.variants must be in [1, 100]")
    _check(r.workers >= 1, "remesh.workers must be >= 1")
    try:
        c.remesh_config()
    except ValueError as e:
        raise ConfigError(f"remesh: {e}") from e


_SECTIONS = {"model": ModelConfig, "remesh": RemeshSection, "pretrain": PretrainSection,
             "finetune": FinetuneSection, "probe": ProbeSection, "aug": AugmentConfig}


def from_dict(data: dict, base: RunConfig | None = None) -> RunConfig:
    """Overlay ``data`` on ``base``; unknown sections or keys are rejected."""
    base = base or RunConfig()
    updates = {}
    for key, value in data.items():
        if key == "seed":
            _check(isinstance(value, int) and value >= 0, "seed must be a non-negative integer")
            updates["seed"] = value
            continue
        if key not in _SECTIONS:
            raise ConfigError(f"unknown config section {key!r}")
        if not isinstance(value, dict):
            raise ConfigError(f"[{key}] must be a table")
        cls = _SECTIONS[key]
        known = {f.name: f for f in fields(cls)}
        unknown = set(value) - set(known)
        if unknown:
            raise ConfigError(f"unknown keys in [{key}]: {sorted(unknown)}")
        for k, v in value.items():
            _check(not isinstance(v, (dict, list)), f"{key}.{k} must be a scalar")
        try:
            updates[key] = replace(getattr(base, key), **value)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"[{key}]: {e}") from e
    try:
        return replace(base, **updates)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e


def load_config(path: str | Path | None = None, preset: str = "desk") -> RunConfig:
    """Parse a TOML file over the ``desk`` or ``paper`` model preset."""
    model = {"desk": desk_config, "paper": paper_config}[preset]()
    base = RunConfig(model=model)
    if path is None:
        return base
    try:
        data = tomllib.loads(Path(path).read_text())
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    return from_dict(data, base)
