"""AdamW with decoupled weight decay and learning-rate schedules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .nn import Parameter


def cosine_lr(base: float, step: int, horizon: int) -> float:
    """``base * 0.5 * (1 + cos(pi * step / horizon))``, no warmup."""
    if horizon <= 0:
        return base
    t = min(step, horizon)
    return base * 0.5 * (1.0 + math.cos(math.pi * t / horizon))


def step_lr(base: float, epoch: int, milestones: Sequence[int], gamma: float = 0.1) -> float:
    """Multiply by ``gamma`` at each milestone epoch passed."""
    return base * gamma ** sum(epoch >= m for m in milestones)


@dataclass
class OptimState:
    lr: float = 1e-4
    weight_decay: float = 0.05
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    horizon: int = 0
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


class AdamW:
    """Adam with decoupled weight decay.

    Decay ``p -= lr * wd * p`` applies to matrices only (``ndim >= 2``);
    biases, norm scales and the mask token are not decayed.  With
    ``schedule="cosine"`` the learning rate follows :func:`cosine_lr` over
    ``horizon`` steps; otherwise it is whatever ``lr`` is set to.
    """

    def __init__(self, params: Sequence[Parameter], lr: float = 1e-4, weight_decay: float = 0.05,
                 betas=(0.9, 0.999), eps: float = 1e-8, horizon: int = 0,
                 schedule: str | None = "cosine"):
        self.params = list(params)
        self.state = OptimState(lr, weight_decay, tuple(betas), eps, horizon, 0,
                                [np.zeros_like(p.data) for p in self.params],
                                [np.zeros_like(p.data) for p in self.params])
        self.schedule = schedule

    def current_lr(self) -> float:
        s = self.state
        if self.schedule == "cosine" and s.horizon > 0:
            return cosine_lr(s.lr, s.step, s.horizon)
        return s.lr

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> float:
        """Apply one update from the accumulated ``.grad``; returns the lr used."""
        s = self.state
        lr = self.current_lr()
        b1, b2 = s.betas
        s.step += 1
        c1 = 1.0 - b1 ** s.step
        c2 = 1.0 - b2 ** s.step
        for p, m, v in zip(self.params, s.m, s.v):
            if not p.requires_grad:
                continue
            if p.data.ndim >= 2 and s.weight_decay:
                p.data = p.data - (lr * s.weight_decay) * p.data
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + s.eps)
            p.data = (p.data - lr * update).astype(p.data.dtype)
        return lr

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (m, v) in enumerate(zip(self.state.m, self.state.v)):
            out[f"m.{i}"] = m
            out[f"v.{i}"] = v
        return out
