"""Shared test helpers."""

import numpy as np

from meshmae import autodiff as ad
from meshmae.autodiff import Tensor
from meshmae.data import prepare_sample
from meshmae.remesh import RemeshConfig, remesh_pipeline
from meshmae.synth import make_shape

# criterion number -> summary line, filled by test_acceptance
ACCEPTANCE: dict[int, str] = {}


def verdict(number: int, ok: bool, detail: str) -> None:
    """Record and print one PASS/FAIL line, then fail the test if needed."""
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)
    assert ok, line


def build_dataset(families, per_class, seed, noise=0.0, rotate=False):
    """Remeshed, labelled samples; label = index of the family."""
    rng = np.random.default_rng(seed)
    out = []
    for label, fam in enumerate(families):
        for i in range(per_class):
            mesh = make_shape(fam, rng, noise, rotate)
            tm = remesh_pipeline(mesh, RemeshConfig(seed=int(rng.integers(1 << 31))))
            out.append(prepare_sample(tm, f"{fam}{i}", label))
    return out


def leaf(rng, *shape, positive=False):
    x = rng.normal(size=shape)
    if positive:
        x = np.abs(x) + 0.5
    return Tensor(x, requires_grad=True)


def weighted(out: Tensor, seed=99) -> Tensor:
    """Contract with fixed random weights so every output entry matters."""
    w = np.random.default_rng(seed).normal(size=out.shape)
    return (out * w).sum()


def primitive_cases():
    """Name -> (scalar program, leaves) covering every differentiable primitive."""
    r = np.random.default_rng(0)
    a, b = leaf(r, 3, 4), leaf(r, 4)
    c, d = leaf(r, 2, 3, 4), leaf(r, 2, 4, 5)
    p = leaf(r, 3, 4, positive=True)
    x = leaf(r, 5, 6)
    w = leaf(r, 4, 5)
    gamma, beta = leaf(r, 6), leaf(r, 6)
    table = leaf(r, 7, 3)
    ids = np.array([1, 4, 1, 6])
    return {
        "add_broadcast": (lambda: weighted(a + b), {"a": a, "b": b}),
        "sub": (lambda: weighted(a - b), {"a": a, "b": b}),
        "mul": (lambda: weighted(a * b), {"a": a, "b": b}),
        "div": (lambda: weighted(a / p), {"a": a, "p": p}),
        "neg_rsub": (lambda: weighted(1.0 - (-a)), {"a": a}),
        "gelu": (lambda: weighted(ad.gelu(a)), {"a": a}),
        "matmul_batched": (lambda: weighted(ad.matmul(c, d)), {"c": c, "d": d}),
        "matmul_broadcast": (lambda: weighted(ad.matmul(c, w)), {"c": c, "w": w}),
        "transpose": (lambda: weighted(c.transpose(2, 0, 1)), {"c": c}),
        "reshape": (lambda: weighted(c.reshape(6, 4)), {"c": c}),
        "concat": (lambda: weighted(ad.concat([a, p], axis=1)), {"a": a, "p": p}),
        "getitem_slice": (lambda: weighted(c[:, 1:, ::2]), {"c": c}),
        "getitem_fancy_dup": (lambda: weighted(a[np.array([0, 2, 0])]), {"a": a}),
        "embedding": (lambda: weighted(ad.embedding_lookup(table, ids)), {"t": table}),
        "sum_axis": (lambda: weighted(c.sum(axis=1)), {"c": c}),
        "mean_keepdims": (lambda: weighted(c.mean(axis=(0, 2), keepdims=True)), {"c": c}),
        "max": (lambda: weighted(c.max(axis=1)), {"c": c}),
        "min": (lambda: weighted(c.min(axis=2)), {"c": c}),
        "softmax": (lambda: weighted(ad.softmax(x, axis=-1)), {"x": x}),
        "log_softmax": (lambda: weighted(ad.log_softmax(x, axis=0)), {"x": x}),
        "layer_norm": (lambda: weighted(ad.layer_norm(x, gamma, beta)),
                       {"x": x, "gamma": gamma, "beta": beta}),
        "cross_entropy": (lambda: ad.cross_entropy(x, [0, 5, 2, 2, 1]), {"x": x}),
    }
