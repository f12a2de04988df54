import math

import numpy as np
import pytest

from meshmae.nn import Parameter
from meshmae.optim import AdamW, cosine_lr, step_lr


def test_cosine_endpoints():
    assert cosine_lr(1.0, 0, 100) == 1.0
    assert cosine_lr(1.0, 50, 100) == pytest.approx(0.5)
    assert cosine_lr(1.0, 100, 100) == pytest.approx(0.0)
    assert cosine_lr(1.0, 500, 100) == pytest.approx(0.0)


def test_step_lr():
    lrs = [step_lr(1.0, e, [3, 6]) for e in range(8)]
    assert lrs == pytest.approx([1, 1, 1, 0.1, 0.1, 0.1, 0.01, 0.01])


def test_adamw_two_steps_closed_form():
    w = Parameter(np.array([[1.0, -2.0]]))
    b = Parameter(np.array([0.5]))
    opt = AdamW([w, b], lr=0.1, weight_decay=0.5, schedule=None)
    grads = [(np.array([[0.2, 0.4]]), np.array([1.0])), (np.array([[-0.1, 0.3]]), np.array([2.0]))]
    ew, eb = w.data.copy(), b.data.copy()
    mw = vw = np.zeros_like(ew)
    mb = vb = np.zeros_like(eb)
    for t, (gw, gb) in enumerate(grads, 1):
        w.grad, b.grad = gw, gb
        opt.step()
        ew = ew - 0.1 * 0.5 * ew
        mw = 0.9 * mw + 0.1 * gw
        vw = 0.999 * vw + 0.001 * gw ** 2
        ew = ew - 0.1 * (mw / (1 - 0.9 ** t)) / (np.sqrt(vw / (1 - 0.999 ** t)) + 1e-8)
        # 1-D parameters are not decayed
        mb = 0.9 * mb + 0.1 * gb
        vb = 0.999 * vb + 0.001 * gb ** 2
        eb = eb - 0.1 * (mb / (1 - 0.9 ** t)) / (np.sqrt(vb / (1 - 0.999 ** t)) + 1e-8)
        assert np.allclose(w.data, ew) and np.allclose(b.data, eb)


def test_frozen_parameters_untouched():
    w = Parameter(np.ones((2, 2)))
    w.requires_grad = False
    w.grad = np.ones((2, 2))
    AdamW([w], lr=1.0).step()
    assert np.array_equal(w.data, np.ones((2, 2)))


def test_cosine_schedule_in_optimizer():
    w = Parameter(np.zeros((1, 1)))
    opt = AdamW([w], lr=1.0, weight_decay=0.0, horizon=4)
    used = []
    for _ in range(5):
        w.grad = np.ones((1, 1))
        used.append(opt.step())
    assert used == pytest.approx([0.5 * (1 + math.cos(math.pi * s / 4)) for s in range(4)] + [0.0])
