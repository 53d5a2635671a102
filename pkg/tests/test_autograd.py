"""Engine-level behavior: backward semantics, tape lifecycle, determinism."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evstereo import autograd as ag
from evstereo.autograd import Tensor
from evstereo.gradcheck import check_gradients


def test_sum_gradient_is_ones():
    x = Tensor(np.arange(12, dtype=float).reshape(3, 4), requires_grad=True)
    ag.backward(x.sum())
    assert np.array_equal(x.grad, np.ones((3, 4)))


def test_square_sum_gradient():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    ag.backward((x * x).sum())
    assert np.allclose(x.grad, [2.0, 4.0, 6.0])


def test_backward_rejects_non_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = x * 2.0
    with pytest.raises(ValueError, match="scalar"):
        ag.backward(y)


def test_tape_freed_after_backward():
    x = Tensor([1.0, 2.0], requires_grad=True)
    ag.backward((x * x).sum())
    assert ag.tape_size() == 0


def test_reused_tensor_accumulates_gradient():
    x = Tensor([2.0], requires_grad=True)
    y = x * x + x * 3.0
    ag.backward(y.sum())
    assert np.allclose(x.grad, [2 * 2.0 + 3.0])


def test_no_grad_suppresses_recording():
    x = Tensor([1.0], requires_grad=True)
    with ag.no_grad():
        y = x * 2.0
    assert ag.tape_size() == 0
    assert not y.requires_grad


def test_grad_reaches_only_requires_grad_leaves():
    x = Tensor([1.0], requires_grad=True)
    c = Tensor([5.0])
    ag.backward((x * c).sum())
    assert x.grad is not None
    assert c.grad is None


def test_broadcast_add_unbroadcasts_gradient():
    x = Tensor(np.ones((2, 3)), requires_grad=True)
    b = Tensor(np.ones((1, 3)), requires_grad=True)
    ag.backward((x + b).sum())
    assert x.grad.shape == (2, 3)
    assert b.grad.shape == (1, 3)
    assert np.allclose(b.grad, 2.0)


def test_softmax_axis_out_of_range():
    with pytest.raises(ValueError, match="axis"):
        ag.softmax(Tensor(np.ones(3)), axis=2)


def test_softmax_equal_logits_uniform():
    p = ag.softmax(Tensor(np.zeros(4)), axis=0)
    assert np.allclose(p.data, 0.25)


@given(st.integers(min_value=2, max_value=6), st.integers(min_value=0, max_value=3))
@settings(max_examples=20, deadline=None)
def test_softmax_sums_to_one(n, seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=(3, n)) * 10)
    p = ag.softmax(x, axis=1)
    assert np.all(p.data >= 0)
    assert np.allclose(p.data.sum(axis=1), 1.0, atol=1e-6)


def test_matmul_shape_errors():
    with pytest.raises(ValueError, match="inner dims"):
        ag.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ValueError, match="batch dims"):
        ag.matmul(Tensor(np.ones((2, 2, 3))), Tensor(np.ones((3, 3, 2))))


def test_composite_gradients_match_finite_differences():
    rng = np.random.default_rng(1)
    x = Tensor(rng.uniform(-1, 1, size=(2, 3)), requires_grad=True)
    y = Tensor(rng.uniform(0.5, 1.5, size=(3, 2)), requires_grad=True)

    def f():
        z = ag.matmul(x, y)
        return (ag.silu(z) * ag.sigmoid(z) + ag.exp(z * 0.1)).sum()

    assert check_gradients(f, [x, y]) < 1e-4


def test_getitem_and_concat_gradients():
    rng = np.random.default_rng(2)
    x = Tensor(rng.uniform(-1, 1, size=(4, 3)), requires_grad=True)
    y = Tensor(rng.uniform(-1, 1, size=(2, 3)), requires_grad=True)

    def f():
        joined = ag.concat([x[:2], y], axis=0)
        return (joined * joined).sum()

    assert check_gradients(f, [x, y]) < 1e-4


def test_forward_determinism_bitwise():
    rng = np.random.default_rng(3)
    data = rng.normal(size=(2, 8))
    w = rng.normal(size=(8, 8))

    def run():
        with ag.no_grad():
            return ag.softmax(ag.matmul(Tensor(data), Tensor(w)), axis=1).data

    a, b = run(), run()
    assert a.tobytes() == b.tobytes()


def test_nan_check_names_offending_op():
    with ag.nan_check(), np.errstate(invalid="ignore"):
        with pytest.raises(ag.NonFiniteError, match="log"):
            ag.log(Tensor([-1.0]))


def test_clamp_gradient_masks_outside():
    x = Tensor([-2.0, 0.5, 2.0], requires_grad=True)
    ag.backward(ag.clamp(x, 0.0, 1.0).sum())
    assert np.allclose(x.grad, [0.0, 1.0, 0.0])
