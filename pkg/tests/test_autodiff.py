import math

import numpy as np
import pytest

from meshmae import autodiff as ad
from meshmae.autodiff import ShapeError, Tensor, grad_check

from helpers import leaf, primitive_cases


@pytest.mark.parametrize("name", list(primitive_cases()))
def test_primitive_gradients(name):
    f, params = primitive_cases()[name]
    rep = grad_check(f, params, step=1e-6, tolerance=1e-4)
    assert rep.passed, (name, rep.max_rel_error)


def test_matmul_gradient_closed_form():
    rng = np.random.default_rng(1)
    a, b = leaf(rng, 3, 4), leaf(rng, 4, 2)
    g = rng.normal(size=(3, 2))
    ad.backward((ad.matmul(a, b) * g).sum())
    assert np.allclose(a.grad, g @ b.data.T)
    assert np.allclose(b.grad, a.data.T @ g)


def test_gelu_values():
    x = np.array([-3.0, -1.0, 0.0, 0.5, 2.0])
    expect = [0.5 * v * (1 + math.tanh(math.sqrt(2 / math.pi) * (v + 0.044715 * v ** 3))) for v in x]
    assert np.allclose(ad.gelu(Tensor(x)).data, expect)


def test_softmax_and_cross_entropy_values():
    logits = np.array([[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]])
    e = np.exp(logits - logits.max(1, keepdims=True))
    p = e / e.sum(1, keepdims=True)
    assert np.allclose(ad.softmax(Tensor(logits)).data, p)
    ce = ad.cross_entropy(Tensor(logits), [2, 0]).item()
    assert ce == pytest.approx(-(np.log(p[0, 2]) + np.log(p[1, 0])) / 2)


def test_layer_norm_values():
    x = np.array([[1.0, 2.0, 3.0, 6.0]])
    out = ad.layer_norm(Tensor(x), np.ones(4), np.zeros(4), eps=0.0).data
    assert np.allclose(out, (x - 3.0) / np.sqrt(3.5))


def test_reused_node_accumulates():
    x = Tensor(np.array([2.0, -1.0]), requires_grad=True)
    y = x * x + x * 3.0
    ad.backward(y.sum())
    assert np.allclose(x.grad, 2 * x.data + 3)


def test_max_gradient_goes_to_first_argmax():
    x = Tensor(np.array([[1.0, 3.0, 3.0]]), requires_grad=True)
    ad.backward(x.max(axis=1).sum())
    assert np.array_equal(x.grad, [[0.0, 1.0, 0.0]])


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with ad.no_grad():
        y = x * 2.0
    assert not y.requires_grad
    assert ad.is_grad_enabled()


def test_shape_errors():
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 3))) + Tensor(np.ones((4,)))
    with pytest.raises(ShapeError):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones(3)))
    with pytest.raises(ShapeError):
        ad.cross_entropy(Tensor(np.ones((2, 3))), [0])


def test_grad_check_detects_wrong_gradient():
    x = Tensor(np.array([0.3, -0.7]), requires_grad=True)

    def broken():
        y = x * 1.0
        out = ad._make(y.data ** 2, (x,), lambda g: x._accumulate(g * 3.0), "bad")
        return out.sum()

    assert not grad_check(broken, {"x": x}).passed


def test_grad_check_restores_dtype():
    x = Tensor(np.ones(3, np.float32), requires_grad=True)
    grad_check(lambda: (x * x).sum(), {"x": x})
    assert x.dtype == np.float32 and x.grad is None
