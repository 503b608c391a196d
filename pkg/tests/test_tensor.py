import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dmkd import tensor as T
from dmkd.errors import BadAxis, MissingGrad, NotScalar, ShapeMismatch
from dmkd.gradcheck import OP_CASES, check
from dmkd.optim import SGD, sgd_step
from dmkd.tensor import Tensor

from . import oracles

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def leaf(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


# ---------------------------------------------------------------- elementwise

def test_mul_hand_example():
    np.testing.assert_array_equal(T.mul(Tensor([1, 2]), Tensor([3, 4])).data, [3, 8])


def test_mul_by_ones_is_identity():
    x = np.random.default_rng(0).normal(size=(2, 3, 4))
    np.testing.assert_array_equal(T.mul(Tensor(x), Tensor(np.ones_like(x))).data, x)


def test_mul_channel_mask_against_loop():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 2, 2))
    m = np.array([[[1.0]], [[0.0]]])
    out = T.mul(Tensor(x), Tensor(m)).data
    for c in range(2):
        for i in range(2):
            for j in range(2):
                assert out[c, i, j] == x[c, i, j] * m[c, 0, 0]
    assert np.all(out[1] == 0)


def test_elementwise_dispatch_and_shape_mismatch():
    a, b = Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])
    np.testing.assert_array_equal(T.elementwise("sub", a, b).data, [[-2, -1], [-3, -2]])
    with pytest.raises(ShapeMismatch):
        T.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))
    with pytest.raises(ValueError):
        T.elementwise("div", a, b)


def test_broadcast_backward_sums_over_expanded_axes():
    a = leaf(np.ones((3, 2, 2)))
    b = leaf(np.full((3, 1, 1), 2.0))
    T.backward(T.sum(T.mul(a, b)).reshape(()))
    np.testing.assert_array_equal(a.grad, np.full((3, 2, 2), 2.0))
    np.testing.assert_array_equal(b.grad, np.full((3, 1, 1), 4.0))


# ---------------------------------------------------------------- matmul

def test_matmul_identity_and_hand_example():
    x = np.random.default_rng(2).normal(size=(2, 5))
    np.testing.assert_array_equal(T.matmul(Tensor(np.eye(2)), Tensor(x)).data, x)
    np.testing.assert_array_equal(T.matmul(Tensor([[1, 2], [3, 4]]), Tensor([[1], [1]])).data, [[3], [7]])


def test_matmul_against_triple_loop():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    np.testing.assert_allclose(T.matmul(Tensor(a), Tensor(b)).data, oracles.matmul(a.tolist(), b.tolist()),
                               rtol=0, atol=1e-14)


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


# ---------------------------------------------------------------- conv2d

def test_conv_1x1_identity():
    x = np.random.default_rng(4).normal(size=(1, 5, 5))
    out = T.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))), Tensor(np.zeros(1)))
    np.testing.assert_array_equal(out.data, x)


def test_conv_ones_kernel_on_one_hot():
    x = np.zeros((1, 3, 3))
    x[0, 1, 1] = 1.0
    out = T.conv2d(Tensor(x), Tensor(np.ones((1, 1, 3, 3))))
    np.testing.assert_array_equal(out.data, np.ones((1, 3, 3)))


def test_conv_against_six_loop_oracle():
    rng = np.random.default_rng(5)
    x, w, b = rng.normal(size=(2, 4, 4)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)
    expected = oracles.conv2d(x.tolist(), w.tolist(), b.tolist())
    np.testing.assert_allclose(T.conv2d(Tensor(x), Tensor(w), Tensor(b)).data, expected, rtol=0, atol=1e-13)


def test_conv_batched_matches_per_sample():
    rng = np.random.default_rng(6)
    x, w = rng.normal(size=(3, 2, 5, 5)), rng.normal(size=(4, 2, 3, 3))
    batched = T.conv2d(Tensor(x), Tensor(w)).data
    for n in range(3):
        np.testing.assert_allclose(batched[n], T.conv2d(Tensor(x[n]), Tensor(w)).data, rtol=0, atol=1e-13)


def test_conv_channel_mismatch():
    with pytest.raises(ShapeMismatch):
        T.conv2d(Tensor(np.ones((2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))))


# ---------------------------------------------------------------- activations

def test_activation_examples():
    assert T.activation("sigmoid", Tensor(0.0)).item() == 0.5
    assert T.activation("relu", Tensor(-1.0)).item() == 0.0
    mpmath.mp.dps = 50
    exact = mpmath.mpf(1) * mpmath.ncdf(1)
    assert abs(T.activation("gelu", Tensor(1.0)).item() - float(exact)) < 1e-15


@given(arrays(np.float64, 6, elements=st.floats(-30, 30)))
def test_sigmoid_matches_scalar_formula(x):
    out = T.sigmoid(Tensor(x)).data
    assert np.all((out >= 0) & (out <= 1))
    for v, o in zip(x, out):
        assert math.isclose(o, oracles.sigmoid(v), rel_tol=1e-12, abs_tol=1e-300)


@given(arrays(np.float64, 5, elements=finite))
def test_gelu_matches_erf_form(x):
    np.testing.assert_allclose(T.gelu(Tensor(x)).data, [oracles.gelu(v) for v in x], rtol=1e-13, atol=1e-15)


# ---------------------------------------------------------------- layer norm

def test_layer_norm_examples():
    g, b = Tensor(np.ones(4)), Tensor(np.zeros(4))
    np.testing.assert_array_equal(T.layer_norm(Tensor(np.full(4, 3.0)), g, b).data, np.zeros(4))
    out = T.layer_norm(Tensor([1.0, -1.0]), Tensor(np.ones(2)), Tensor(np.zeros(2))).data
    np.testing.assert_allclose(out, [1, -1], atol=1e-5)


def test_layer_norm_against_two_pass():
    rng = np.random.default_rng(7)
    v, g, b = rng.normal(size=8), rng.normal(size=8), rng.normal(size=8)
    got = T.layer_norm(Tensor(v), Tensor(g), Tensor(b)).data
    np.testing.assert_allclose(got, oracles.layer_norm(v.tolist(), g.tolist(), b.tolist()), rtol=0, atol=1e-13)


# ---------------------------------------------------------------- reductions / shape ops

def test_reduce_examples():
    assert T.reduce("sum", Tensor(np.ones((2, 3)))).item() == 6.0
    c = T.reduce("mean", Tensor(np.full((2, 4, 4), 1.25)), axes=(1, 2))
    assert c.shape == (2, 1, 1)
    np.testing.assert_array_equal(c.data, 1.25)
    x = np.random.default_rng(8).normal(size=(3, 2))
    s = T.reduce("sum", Tensor(x), axes=(0,)).data
    for j in range(2):
        assert s[0, j] == pytest.approx(x[0, j] + x[1, j] + x[2, j], abs=1e-15)


def test_reduce_bad_axis():
    with pytest.raises(BadAxis):
        T.sum(Tensor(np.ones((2, 3))), axes=(2,))
    with pytest.raises(BadAxis):
        T.mean(Tensor(np.ones((2, 3))), axes=(0, 0))


def test_reshape_transpose_roundtrip():
    x = np.arange(24.0).reshape(2, 3, 4)
    y = T.transpose(T.reshape(Tensor(x), (4, 3, 2)), (2, 0, 1))
    assert y.shape == (2, 4, 3)
    np.testing.assert_array_equal(y.data, x.reshape(4, 3, 2).transpose(2, 0, 1))


def test_cross_entropy_against_logsumexp():
    rng = np.random.default_rng(9)
    logits, labels = rng.normal(size=(4, 3)), np.array([0, 2, 1, 2])
    expected = np.mean([math.log(sum(math.exp(v) for v in row)) - row[y] for row, y in zip(logits, labels)])
    assert T.cross_entropy(Tensor(logits), labels).item() == pytest.approx(expected, abs=1e-14)


# ---------------------------------------------------------------- backward

def test_backward_sum_gives_ones():
    x = leaf(np.random.default_rng(10).normal(size=(2, 3, 4)))
    T.backward(T.sum(x).reshape(()))
    np.testing.assert_array_equal(x.grad, np.ones((2, 3, 4)))


def test_backward_at_quadratic_minimum_is_zero():
    x = leaf(np.random.default_rng(11).normal(size=(3, 3)))
    d = T.sub(x, x.detach())
    T.backward(T.sum(T.mul(d, d)).reshape(()))
    np.testing.assert_array_equal(x.grad, np.zeros((3, 3)))


def test_backward_requires_scalar():
    with pytest.raises(NotScalar):
        T.backward(leaf(np.ones(3)) * 2.0)


def test_shared_subexpression_accumulates():
    x = leaf([2.0])
    y = T.mul(x, x)
    T.backward(T.sum(T.add(y, y)).reshape(()))
    np.testing.assert_array_equal(x.grad, [8.0])


def test_gradients_accumulate_across_calls():
    x = leaf([1.0, 2.0])
    T.backward(T.sum(x).reshape(()))
    T.backward(T.sum(T.mul(x, 3.0)).reshape(()))
    np.testing.assert_array_equal(x.grad, [4.0, 4.0])


def test_no_grad_records_nothing():
    x = leaf([1.0])
    with T.no_grad():
        y = T.mul(x, x)
    assert not y.requires_grad


@pytest.mark.parametrize("name", sorted(OP_CASES))
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_every_op_against_finite_differences(name, seed):
    build, inputs = OP_CASES[name](np.random.default_rng([seed, 77]))
    assert check(build, inputs) < 1e-6


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (2, 3), elements=finite), arrays(np.float64, (2, 3), elements=finite),
       st.floats(-3, 3), st.floats(-3, 3))
def test_backward_is_linear_in_the_loss(x, r, a, b):
    """grad(a*f + b*g) == a*grad(f) + b*grad(g)."""
    def grad_of(build):
        t = leaf(x)
        T.backward(build(t))
        return t.grad

    f = lambda t: T.sum(T.mul(T.sigmoid(t), Tensor(r))).reshape(())
    g = lambda t: T.sum(T.mul(t, t)).reshape(())
    combined = grad_of(lambda t: T.add(T.mul(f(t), a), T.mul(g(t), b)))
    np.testing.assert_allclose(combined, a * grad_of(f) + b * grad_of(g), rtol=1e-12, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([(2, 1), (1, 3), (1, 1), (2, 3)]))
def test_broadcast_gradient_has_operand_shape(shape_b):
    a = leaf(np.ones((2, 3)))
    b = leaf(np.full(shape_b, 0.5))
    T.backward(T.sum(T.mul(a, b)).reshape(()))
    assert b.grad.shape == shape_b
    assert b.grad.sum() == pytest.approx(6.0)


# ---------------------------------------------------------------- SGD

def test_sgd_zero_lr_leaves_params():
    p = leaf([1.0, -2.0])
    p.grad = np.array([5.0, 5.0])
    sgd_step([p], lr=0.0, momentum=0.9)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_sgd_hand_example():
    p = leaf([1.0])
    p.grad = np.array([0.5])
    sgd_step([p], lr=0.1, momentum=0.0)
    assert p.data[0] == pytest.approx(0.95, abs=1e-15)
    assert p.grad is None


def test_sgd_two_momentum_steps_unrolled():
    p = leaf([1.0])
    opt = SGD([p], lr=0.1, momentum=0.9)
    p.grad = np.array([0.5])
    opt.step()
    p.grad = np.array([-0.2])
    opt.step()
    v1 = 0.5
    v2 = 0.9 * v1 - 0.2
    assert p.data[0] == pytest.approx(1.0 - 0.1 * v1 - 0.1 * v2, abs=1e-15)


def test_sgd_missing_grad_raises():
    p, q = leaf([1.0]), leaf([2.0])
    p.grad = np.array([1.0])
    with pytest.raises(MissingGrad):
        SGD([p, q], lr=0.1).step()
