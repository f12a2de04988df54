"""Parameter containers and basic layers on top of :mod:`meshmae.autodiff`."""

from __future__ import annotations

import copy
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02,
                 dtype=np.float32) -> np.ndarray:
    """Normal(0, std) truncated to +-2 std by resampling."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out.astype(dtype)


class Parameter(Tensor):
    """Leaf tensor registered by :class:`Module`, trainable unless frozen."""

    __slots__ = ()

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


def parameter(data: np.ndarray) -> Parameter:
    return Parameter(data)


class Buffer:
    """Non-trainable array that travels with the state dict."""

    __slots__ = ("data",)

    def __init__(self, data):
        self.data = np.asarray(data)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype


class Module:
    """Attribute-walking parameter registry.

    :class:`Parameter` attributes are parameters and :class:`Buffer`
    attributes are saved state; attributes holding modules or lists of
    modules are walked recursively.
    """

    def _walk(self, kind, prefix: str = ""):
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, kind):
                yield full, value
            elif isinstance(value, Module):
                yield from value._walk(kind, full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item._walk(kind, f"{full}.{i}.")

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        return self._walk(Parameter, prefix)

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, Buffer]]:
        return self._walk(Buffer, prefix)

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {k: p.data for k, p in self.named_parameters()}
        state.update((k, b.data) for k, b in self.named_buffers())
        return state

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> list[str]:
        """Copy matching arrays in; returns the names that were loaded."""
        own = dict(self.named_parameters())
        own.update(self.named_buffers())
        if strict:
            missing = set(own) - set(state)
            extra = set(state) - set(own)
            if missing or extra:
                raise KeyError(f"state mismatch: missing {sorted(missing)[:5]}, "
                               f"unexpected {sorted(extra)[:5]}")
        loaded = []
        for k, p in own.items():
            if k in state:
                arr = np.asarray(state[k])
                if arr.shape != p.shape:
                    raise ValueError(f"{k}: shape {arr.shape} != {p.shape}")
                p.data = arr.astype(p.dtype).copy()
                loaded.append(k)
        return loaded

    def astype(self, dtype) -> "Module":
        """Deep copy with every parameter cast to ``dtype``."""
        clone = copy.deepcopy(self)
        for p in clone.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        for _, b in clone.named_buffers():
            b.data = b.data.astype(dtype)
        return clone

    def freeze(self, frozen: bool = True) -> None:
        for p in self.parameters():
            p.requires_grad = not frozen

    @property
    def dtype(self):
        return next(iter(self.parameters())).dtype


class Linear(Module):
    """``x @ W + b`` with truncated-normal ``W`` (std 0.02) and zero ``b``."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator | None):
        w = trunc_normal(rng, (d_in, d_out)) if rng is not None else np.zeros((d_in, d_out), np.float32)
        self.weight = parameter(w)
        self.bias = parameter(np.zeros(d_out, np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.matmul(x, self.weight) + self.bias


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = parameter(np.ones(dim, np.float32))
        self.beta = parameter(np.zeros(dim, np.float32))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gamma, self.beta, self.eps)


class MLP(Module):
    """Linear -> GELU -> Linear."""

    def __init__(self, d_in: int, hidden: int, d_out: int, rng: np.random.Generator | None):
        self.fc1 = Linear(d_in, hidden, rng)
        self.fc2 = Linear(hidden, d_out, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ad.gelu(self.fc1(x)))
