import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from twopath.checks import GRAD_TOLERANCE, gradient_cases, run_gradient_suite
from twopath.core import (
    SGD,
    GraphStateError,
    Parameter,
    Tensor,
    backward,
    clip_grad_norm,
    concat,
    conv3d,
    grad_check,
    hadamard,
    linear,
    relu,
    sgd_step,
)


def test_sum_of_scalar_param():
    w = Parameter(np.array(3.0))
    backward(w.sum())
    assert w.grad == 1.0


def test_hadamard_grad_is_other_operand():
    rng = np.random.default_rng(0)
    a, b = Parameter(rng.standard_normal(5)), Parameter(rng.standard_normal(5))
    backward(hadamard(a, b).sum())
    np.testing.assert_array_equal(a.grad, b.data)
    np.testing.assert_array_equal(b.grad, a.data)


def test_backward_twice_is_state_error():
    w = Parameter(np.ones(2))
    loss = (w * 3.0).sum()
    backward(loss)
    with pytest.raises(GraphStateError):
        backward(loss)


def test_shared_subexpression_accumulates():
    w = Parameter(np.array([2.0]), dtype=np.float64)
    y = w * w  # used twice below
    backward((y + y).sum())
    assert w.grad.item() == pytest.approx(8.0)


def test_frozen_parameter_grad_not_written():
    w = Parameter(np.ones(3))
    v = Parameter(np.ones(3))
    w.frozen = True
    backward(hadamard(w, v).sum())
    np.testing.assert_array_equal(w.grad, np.zeros(3))
    np.testing.assert_array_equal(v.grad, np.ones(3))


def test_gradcheck_linear():
    assert grad_check(linear, [(3, 4), (2, 4), (2,)], seed=1) < 1e-6


def test_gradcheck_relu_away_from_kink():
    def sampler(rng, shape):
        return rng.uniform(0.1, 2, size=shape) * rng.choice([-1, 1], size=shape)
    assert grad_check(relu, [(4, 5)], seed=2, sampler=sampler) < 1e-6


def test_gradcheck_conv3d():
    err = grad_check(lambda x, w: conv3d(x, w), [(1, 1, 3, 4, 4), (2, 1, 2, 2, 2)], seed=3)
    assert err < 1e-4


def test_gradcheck_detects_wrong_backward():
    def bad_double(x):
        out = x * 2.0
        out._backward = lambda g: (g * 3.0,)
        return out
    assert grad_check(bad_double, [(3,)]) > 0.1


def test_every_op_has_three_shapes():
    counts = {}
    for case in gradient_cases():
        counts[case.op] = counts.get(case.op, 0) + 1
    assert min(counts.values()) >= 3
    for op in ("conv2d", "conv3d", "maxpool3d", "global_avgpool3d", "batchnorm[train]", "relu", "linear",
               "dropout", "concat", "hadamard", "softmax_cross_entropy"):
        assert op in counts


def test_gradient_suite_passes():
    for result in run_gradient_suite():
        assert result.value < GRAD_TOLERANCE, result


# ---------------------------------------------------------------- sgd

def test_sgd_plain_step():
    p = Parameter(np.array([1.0, 2.0]), name="p", dtype=np.float64)
    p.grad = np.array([0.5, -1.0])
    SGD([p], lr=0.1, momentum=0.0).step()
    np.testing.assert_allclose(p.data, [0.95, 2.1])


def test_sgd_frozen_unchanged():
    p = Parameter(np.array([1.0, 2.0]), name="p")
    p.grad = np.ones(2, dtype=np.float32)
    p.frozen = True
    before = p.data.tobytes()
    SGD([p], lr=0.1, weight_decay=0.1).step()
    assert p.data.tobytes() == before


def test_sgd_momentum_two_steps():
    p = Parameter(np.array([0.0]), name="p", dtype=np.float64)
    velocity = {}
    deltas = []
    for _ in range(2):
        p.grad = np.array([1.0])
        before = p.data.copy()
        sgd_step([p], 0.1, 0.9, 0.0, velocity)
        deltas.append((p.data - before).item())
    assert deltas == pytest.approx([-0.1, -0.19], abs=1e-15)


def test_sgd_weight_decay_folded_in():
    p = Parameter(np.array([2.0]), name="p", dtype=np.float64)
    p.grad = np.array([0.0])
    SGD([p], lr=0.5, momentum=0.0, weight_decay=0.1).step()
    assert p.data.item() == pytest.approx(2.0 - 0.5 * 0.2)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(1, 8), elements=st.floats(-1e3, 1e3)),
       st.floats(1e-5, 1.0), st.floats(0.0, 0.99))
def test_sgd_zero_grad_is_identity(values, lr, momentum):
    p = Parameter(values.copy(), name="p", dtype=np.float64)
    opt = SGD([p], lr=lr, momentum=momentum, weight_decay=0.0)
    for _ in range(3):
        opt.zero_grad()
        opt.step()
    np.testing.assert_array_equal(p.data, values)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_frozen_bit_identical_across_cycles(cycles, seed):
    rng = np.random.default_rng(seed)
    frozen = Parameter(rng.standard_normal(4), name="frozen")
    live = Parameter(rng.standard_normal(4), name="live")
    frozen.frozen = True
    before = frozen.data.tobytes()
    opt = SGD([frozen, live], lr=0.1, momentum=0.9, weight_decay=5e-4)
    for _ in range(cycles):
        opt.zero_grad()
        backward(hadamard(frozen, live).sum())
        opt.step()
    assert frozen.data.tobytes() == before


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 5), min_size=1, max_size=4), st.integers(0, 1000))
def test_concat_then_slice_is_identity(lengths, seed):
    rng = np.random.default_rng(seed)
    parts = [rng.standard_normal((2, n)) for n in lengths]
    out = concat([Tensor(p) for p in parts], axis=1).data
    start = 0
    for p in parts:
        np.testing.assert_array_equal(out[:, start:start + p.shape[1]], p)
        start += p.shape[1]


def test_clip_grad_norm_rescales_to_cap():
    a = Parameter(np.zeros(2), dtype=np.float64)
    b = Parameter(np.zeros(1), dtype=np.float64)
    a.grad, b.grad = np.array([3.0, 0.0]), np.array([4.0])
    assert clip_grad_norm([a, b], 1.0) == pytest.approx(5.0)
    np.testing.assert_allclose(np.concatenate([a.grad, b.grad]), [0.6, 0.0, 0.8])


def test_clip_grad_norm_leaves_small_and_frozen_grads():
    a = Parameter(np.zeros(2), dtype=np.float64)
    a.grad = np.array([0.3, 0.4])
    clip_grad_norm([a], 1.0)
    np.testing.assert_array_equal(a.grad, [0.3, 0.4])
    f = Parameter(np.zeros(1), dtype=np.float64)
    f.grad, f.frozen = np.array([100.0]), True
    assert clip_grad_norm([a, f], 1.0) == pytest.approx(0.5)
    assert f.grad[0] == 100.0

