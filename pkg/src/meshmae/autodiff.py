"""Reverse-mode automatic differentiation over numpy arrays.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to parent gradients.  ``backward`` walks
the recorded graph in reverse topological order.  Arrays keep their dtype:
training runs in float32, :func:`grad_check` re-runs in float64.
"""

from __future__ import annotations

import math
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.op = "leaf"

    # -- basics
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if g.dtype != self.data.dtype:
            g = g.astype(self.data.dtype)
        self.grad = g if self.grad is None else self.grad + g

    def backward(self) -> None:
        backward(self)

    # -- operators
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return tmax(self, axis, keepdims)

    def min(self, axis=None, keepdims=False):
        return tmin(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _const(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    out = Tensor(data)
    out.op = op
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ------------------------------------------------------------ elementwise

def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = _const(b, a)
    _check_broadcast("add", a, b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a = _const(a, b)
    b = _const(b, a)
    _check_broadcast("sub", a, b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = _const(b, a)
    _check_broadcast("mul", a, b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a = as_tensor(a)
    b = _const(b, a)
    _check_broadcast("div", a, b)
    out = a.data / b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * out / b.data, b.shape))

    return _make(out, (a, b), bw, "div")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    x = as_tensor(x)
    d = x.data
    d2 = d * d
    t = np.tanh(_GELU_C * d * (1.0 + 0.044715 * d2))
    out = 0.5 * d * (1.0 + t)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * d2)
        x._accumulate(g * (0.5 * (1.0 + t) + 0.5 * d * (1.0 - t * t) * dinner))

    return _make(out, (x,), bw, "gelu")


# ------------------------------------------------------------ linear algebra

def matmul(a, b) -> Tensor:
    a = as_tensor(a)
    b = _const(b, a)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    return _make(out, (a, b), bw, "matmul")


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(range(x.ndim))[::-1]
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {x.shape}")
    inv = tuple(np.argsort(axes))

    def bw(g):
        x._accumulate(np.transpose(g, inv))

    return _make(np.transpose(x.data, axes), (x,), bw, "transpose")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} into {tuple(shape)}") from None

    def bw(g):
        x._accumulate(g.reshape(x.shape))

    return _make(out, (x,), bw, "reshape")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]} on axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bw(g):
        for t, part in zip(ts, np.split(g, bounds, axis=axis)):
            if t.requires_grad:
                t._accumulate(part)

    return _make(out, ts, bw, "concat")


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in items)


def getitem(x: Tensor, index) -> Tensor:
    """Basic slicing or numpy fancy indexing; repeated indices accumulate."""
    x = as_tensor(x)
    if isinstance(index, Tensor):
        index = index.data.astype(np.int64)
    try:
        out = x.data[index]
    except IndexError as exc:
        raise ShapeError(f"slice: {exc} (shape {x.shape})") from None
    basic = _is_basic_index(index)

    def bw(g):
        z = np.zeros_like(x.data)
        if basic:
            z[index] += g
        else:
            np.add.at(z, index, g)
        x._accumulate(z)

    return _make(np.array(out, copy=True), (x,), bw, "slice")


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Rows of a (N, D) table for an integer index array."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"embedding_lookup: table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding_lookup: ids out of range for table {table.shape}")

    def bw(g):
        z = np.zeros_like(table.data)
        np.add.at(z, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        table._accumulate(z)

    return _make(table.data[ids], (table,), bw, "embedding")


# ------------------------------------------------------------ reductions

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _expand(g: np.ndarray, shape, axes, keepdims) -> np.ndarray:
    if not keepdims:
        for a in sorted(axes):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axis(axis, x.ndim)

    def bw(g):
        x._accumulate(np.array(_expand(g, x.shape, axes, keepdims)))

    return _make(np.sum(x.data, axis=axes, keepdims=keepdims), (x,), bw, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1

    def bw(g):
        x._accumulate(np.array(_expand(g, x.shape, axes, keepdims)) / count)

    return _make(np.mean(x.data, axis=axes, keepdims=keepdims), (x,), bw, "mean")


def tmax(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    """Maximum over one axis (or all); gradient goes to the first argmax."""
    x = as_tensor(x)
    if axis is None:
        flat = reshape(x, (-1,))
        return tmax(flat, 0, keepdims=False)
    axis = axis % x.ndim
    idx = np.argmax(x.data, axis=axis)
    out = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis)
    if not keepdims:
        out = np.squeeze(out, axis)

    def bw(g):
        z = np.zeros_like(x.data)
        gg = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(z, np.expand_dims(idx, axis), gg, axis)
        x._accumulate(z)

    return _make(out, (x,), bw, "max")


def tmin(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    return -tmax(-as_tensor(x), axis, keepdims)


# ------------------------------------------------------------ normalization

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        x._accumulate(y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _make(y, (x,), bw, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse

    def bw(g):
        x._accumulate(g - np.exp(y) * g.sum(axis=axis, keepdims=True))

    return _make(y, (x,), bw, "log_softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x = as_tensor(x)
    gamma = _const(gamma, x)
    beta = _const(beta, x)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: affine params {gamma.shape}/{beta.shape} for width {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        lead = tuple(range(g.ndim - 1))
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=lead))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=lead))
        if x.requires_grad:
            dxhat = g * gamma.data
            x._accumulate(inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                                 - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)))

    return _make(out, (x, gamma, beta), bw, "layer_norm")


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer labels under row-wise softmax."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or len(labels) != logits.shape[0]:
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    lp = log_softmax(logits, axis=-1)
    return -mean(getitem(lp, (np.arange(len(labels)), labels)))


# ------------------------------------------------------------ backward

def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring grad.

    Intermediate gradients are released once propagated.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        node._backward(node.grad)
        node.grad = None
    # keep the graph from pinning memory after the pass
    for node in order:
        node._parents = ()
        node._backward = None


# ------------------------------------------------------------ gradient check

@dataclass
class GradCheckReport:
    """Analytic vs central-difference gradients, per named tensor.

    Relative error per coordinate is ``|a - n| / max(|a|, |n|, floor)``.
    """

    max_rel_error: dict[str, float]
    frac_within: dict[str, float]
    tolerance: float
    coords_checked: dict[str, int] = field(default_factory=dict)

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst <= self.tolerance

    def passed_fraction(self, fraction: float) -> bool:
        return all(f >= fraction for f in self.frac_within.values())


def grad_check(f: Callable[[], Tensor], params: dict[str, Tensor], step: float = 1e-4,
               tolerance: float = 1e-4, floor: float = 1e-6,
               max_coords: int | None = None, seed: int = 0) -> GradCheckReport:
    """Compare backward() against central differences, in float64.

    ``f`` is a zero-argument program reading the tensors in ``params``.  The
    tensors are promoted to float64 for the check and restored afterwards.
    At most ``max_coords`` randomly chosen coordinates per tensor are probed.
    """
    saved = {k: (t.data, t.requires_grad) for k, t in params.items()}
    rng = np.random.default_rng(seed)
    try:
        for t in params.values():
            t.data = t.data.astype(np.float64)
            t.grad = None
            t.requires_grad = True
        loss = f()
        backward(loss)
        analytic = {k: (t.grad if t.grad is not None else np.zeros_like(t.data))
                    for k, t in params.items()}
        errs, fracs, counts = {}, {}, {}
        with no_grad():
            for k, t in params.items():
                flat = t.data.reshape(-1)
                coords = np.arange(flat.size)
                if max_coords is not None and flat.size > max_coords:
                    coords = rng.choice(flat.size, max_coords, replace=False)
                a = analytic[k].reshape(-1)[coords]
                n = np.empty(len(coords))
                for j, c in enumerate(coords):
                    orig = flat[c]
                    flat[c] = orig + step
                    fp = f().item()
                    flat[c] = orig - step
                    fm = f().item()
                    flat[c] = orig
                    n[j] = (fp - fm) / (2 * step)
                rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
                errs[k] = float(rel.max()) if len(rel) else 0.0
                fracs[k] = float((rel <= tolerance).mean()) if len(rel) else 1.0
                counts[k] = len(coords)
    finally:
        for k, t in params.items():
            t.data, t.requires_grad = saved[k]
            t.grad = None
    return GradCheckReport(errs, fracs, tolerance, counts)

