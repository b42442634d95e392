import math

import numpy as np
import pytest

from tokgraph.autodiff import Tensor
from tokgraph.optim import Adam, OptimizerState, adam_step, cosine_lr


def test_zero_gradient_leaves_params():
    p = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    before = p.data.copy()
    state = OptimizerState.zeros_like([p])
    adam_step([p], [np.zeros(3)], state, lr=1e-3)
    np.testing.assert_array_equal(p.data, before)
    assert state.step == 1


def test_state_starts_empty():
    p = Tensor(np.ones((2, 2)), requires_grad=True)
    s = OptimizerState.zeros_like([p])
    assert s.step == 0
    assert not s.m[0].any() and not s.v[0].any()


def _hand_adam(grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    # written out term by term, independent of the implementation's loop
    m = v = 0.0
    deltas = []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        deltas.append(-lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps))
    return deltas


def test_first_step_matches_hand_expansion():
    p = Tensor(np.array([0.0]), requires_grad=True)
    state = OptimizerState.zeros_like([p])
    adam_step([p], [np.array([1.0])], state, lr=1e-3)
    (expected,) = _hand_adam([1.0])
    assert abs(p.data[0] - expected) < 1e-12
    assert abs(p.data[0] - (-1e-3)) < 1e-6


def test_second_identical_gradient():
    p = Tensor(np.array([0.0]), requires_grad=True)
    state = OptimizerState.zeros_like([p])
    adam_step([p], [np.array([1.0])], state, lr=1e-3)
    x1 = p.data[0]
    adam_step([p], [np.array([1.0])], state, lr=1e-3)
    assert abs((p.data[0] - x1) - _hand_adam([1.0, 1.0])[1]) < 1e-15


def test_shape_mismatch():
    p = Tensor(np.zeros(3), requires_grad=True)
    with pytest.raises(ValueError):
        adam_step([p], [np.zeros(4)], OptimizerState.zeros_like([p]), lr=1e-3)


def test_adam_wrapper_uses_grad_field():
    p = Tensor(np.zeros(2), requires_grad=True)
    opt = Adam([p])
    p.grad = np.array([1.0, -1.0])
    opt.step(1e-3)
    np.testing.assert_allclose(p.data, [-1e-3, 1e-3], atol=1e-9)


def test_cosine_endpoints_and_midpoint():
    assert cosine_lr(0, 10, 1e-3, 1e-5) == 1e-3
    assert cosine_lr(10, 10, 1e-3, 1e-5) == pytest.approx(1e-5, abs=1e-18)
    assert cosine_lr(5, 10, 1e-3, 1e-5) == pytest.approx((1e-3 + 1e-5) / 2, abs=1e-18)


def test_cosine_rejects_out_of_range():
    with pytest.raises(ValueError):
        cosine_lr(11, 10, 1.0, 0.0)
    with pytest.raises(ValueError):
        cosine_lr(-1, 10, 1.0, 0.0)
    with pytest.raises(ValueError):
        cosine_lr(0, 0, 1.0, 0.0)
