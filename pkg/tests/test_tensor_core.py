import warnings
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from latent_triplanes.tensor_core import (
    SGD,
    Adam,
    GradCheckNaNError,
    Parameter,
    Tensor,
    backward,
    concat,
    conv2d,
    conv_transpose2d,
    grad_check,
    grid_sample_planes,
    mse,
    no_grad,
    precision,
    stack,
)

from oracles import adam_scalar, conv2d_loop, conv_transpose2d_loop

TOL = 1e-4


def leaf(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


# -- backward -----------------------------------------------------------------------------------
def test_sum_gradient_is_ones():
    with precision(np.float64):
        x = leaf([1.0, 2.0, 3.0])
        backward(x.sum())
    np.testing.assert_array_equal(x.grad, [1, 1, 1])


def test_square_gradient_is_twice_x():
    with precision(np.float64):
        x = leaf([1.0, 2.0, 3.0])
        backward((x * x).sum())
    np.testing.assert_array_equal(x.grad, [2, 4, 6])


def test_matrix_regression_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4, 1))
    y = rng.normal(size=(4, 1))
    W = rng.normal(size=(4, 4))
    assert grad_check(lambda w: mse(w @ Tensor(x), Tensor(y)), W) < TOL


def test_backward_rejects_non_scalar():
    x = leaf([1.0, 2.0])
    with pytest.raises(ValueError, match="scalar"):
        backward(x * 2.0)


def test_backward_rejects_untracked_loss():
    with pytest.raises(ValueError):
        backward(Tensor(np.ones(1)).sum())


def test_shared_subexpression_accumulates():
    rng = np.random.default_rng(1)
    x0 = rng.normal(size=5)

    def f(x):
        return (x * x).sum()

    def g(x):
        return x.exp().sum()

    with precision(np.float64):
        a = leaf(x0)
        backward(f(a) + g(a))
        b = leaf(x0)
        backward(f(b))
        c = leaf(x0)
        backward(g(c))
    np.testing.assert_allclose(a.grad, b.grad + c.grad, rtol=1e-12)


def test_each_node_visited_once_in_diamond_graph():
    calls = []
    with precision(np.float64):
        x = leaf([2.0])
        y = x * 3.0
        original = y._backward

        def spy(g):
            calls.append(1)
            original(g)

        y._backward = spy
        backward((y + y * y).sum())
    assert len(calls) == 1
    np.testing.assert_allclose(x.grad, [3.0 + 2 * 6.0 * 3.0])


def test_graph_is_released_after_backward():
    x = leaf([1.0])
    y = (x * 2.0).exp()
    loss = y.sum()
    backward(loss)
    assert y._parents == () and loss._parents == ()


def test_no_grad_builds_no_graph():
    x = leaf([1.0, 2.0])
    with no_grad():
        y = (x * x).sum()
    assert not y.requires_grad and y.is_leaf


def test_precision_switch_changes_default_dtype():
    assert Tensor([1.0]).dtype == np.float32
    with precision(np.float64):
        assert Tensor([1.0]).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)), elements=st.floats(-3, 3)))
def test_grad_shape_matches_value_shape(a):
    x = leaf(a)
    backward((x * x + x.sigmoid()).mean())
    assert x.grad.shape == x.data.shape


# -- primitive gradients ------------------------------------------------------------------------------
UNARY = {
    "exp": lambda t: t.exp(),
    "log": lambda t: (t * t + 1.0).log(),
    "sigmoid": lambda t: t.sigmoid(),
    "softplus": lambda t: t.softplus(),
    "relu": lambda t: t.relu(),
    "leaky_relu": lambda t: t.leaky_relu(0.1),
    "square": lambda t: t.square(),
    "pow": lambda t: (t * t + 1.0) ** 1.5,
    "neg_div": lambda t: 1.0 / (2.0 + t.sigmoid()) - t,
    "cumsum": lambda t: t.cumsum(axis=-1) * t,
    "cumsum_exclusive": lambda t: t.cumsum(axis=-1, exclusive=True).exp(),
    "transpose": lambda t: t.transpose(1, 0) * Tensor(np.arange(12.0).reshape(4, 3)),
    "reshape_index": lambda t: t.reshape(12)[np.array([0, 3, 3, 7])] * 2.0,
    "slice": lambda t: t[1:, ::2] * t[1:, ::2],
    "mean_axis": lambda t: t.mean(axis=0) * Tensor(np.arange(4.0)),
    "broadcast": lambda t: t + Tensor(np.ones((1, 4))) * t[:1],
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_primitive_gradients(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    # keep away from the relu kink
    x = rng.normal(size=(3, 4))
    x = np.where(np.abs(x) < 0.05, 0.3, x)
    f = UNARY[name]
    shape = f(Tensor(x)).shape
    proj = Tensor(np.linspace(0.5, 1.5, int(np.prod(shape))).reshape(shape))
    assert grad_check(lambda t: (f(t) * proj).sum(), x) < TOL


def test_matmul_gradient_both_sides():
    rng = np.random.default_rng(2)
    A, B = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    assert grad_check(lambda a: ((a @ Tensor(B)) ** 2).sum(), A) < TOL
    assert grad_check(lambda b: ((Tensor(A) @ b) ** 2).sum(), B) < TOL


def test_concat_and_stack_gradients():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 3))
    other = Tensor(rng.normal(size=(2, 3)))
    assert grad_check(lambda t: (concat([t, other * t], axis=1) ** 2).sum(), x) < TOL
    assert grad_check(lambda t: (stack([t, t.exp()], axis=0) ** 2).sum(), x) < TOL


@pytest.mark.parametrize("stride,padding,k", [(1, 1, 3), (2, 1, 4), (1, 0, 2)])
def test_conv2d_forward_matches_loop(stride, padding, k):
    rng = np.random.default_rng(4)
    x = rng.normal(size=(2, 3, 8, 8))
    w = rng.normal(size=(5, 3, k, k))
    b = rng.normal(size=5)
    with precision(np.float64):
        y = conv2d(Tensor(x), Tensor(w), Tensor(b), stride, padding).data
    np.testing.assert_allclose(y, conv2d_loop(x, w, b, stride, padding), atol=1e-10)


def test_conv_transpose2d_forward_matches_loop():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(2, 4, 4, 4))
    w = rng.normal(size=(4, 3, 4, 4))
    b = rng.normal(size=3)
    with precision(np.float64):
        y = conv_transpose2d(Tensor(x), Tensor(w), Tensor(b), 2, 1).data
    assert y.shape == (2, 3, 8, 8)
    np.testing.assert_allclose(y, conv_transpose2d_loop(x, w, b, 2, 1), atol=1e-10)


def test_conv_gradients():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(1, 2, 6, 6))
    w = rng.normal(size=(3, 2, 4, 4))
    wt = rng.normal(size=(2, 3, 4, 4))
    b = rng.normal(size=3)
    proj = Tensor(rng.normal(size=(1, 3, 3, 3)))
    proj_t = Tensor(rng.normal(size=(1, 3, 12, 12)))
    assert grad_check(lambda t: (conv2d(t, Tensor(w), Tensor(b), 2, 1) * proj).sum(), x) < TOL
    assert grad_check(lambda t: (conv2d(Tensor(x), t, Tensor(b), 2, 1) * proj).sum(), w) < TOL
    assert grad_check(lambda t: (conv2d(Tensor(x), Tensor(w), t, 2, 1) * proj).sum(), b) < TOL
    assert grad_check(lambda t: (conv_transpose2d(t, Tensor(wt), Tensor(b), 2, 1) * proj_t).sum(), x) < TOL
    assert grad_check(lambda t: (conv_transpose2d(Tensor(x), t, Tensor(b), 2, 1) * proj_t).sum(), wt) < TOL


def test_grid_sample_gradients_planes_and_coordinates():
    rng = np.random.default_rng(7)
    planes = rng.normal(size=(3, 5, 5, 2))
    uv = rng.uniform(-0.95, 0.95, size=(3, 6, 2))
    proj = Tensor(rng.normal(size=(3, 6, 2)))
    assert grad_check(lambda p: (grid_sample_planes(p, Tensor(uv)) * proj).sum(), planes) < TOL
    assert grad_check(lambda c: (grid_sample_planes(Tensor(planes), c) * proj).sum(), uv) < TOL


# -- optimizers -----------------------------------------------------------------------------------------
def test_sgd_single_step():
    p = Parameter([1.0], name="p")
    p.grad = np.array([1.0], dtype=p.dtype)
    SGD([p], lr=0.1).step()
    np.testing.assert_allclose(p.data, [0.9], rtol=1e-6)


@pytest.mark.parametrize("opt_cls", [SGD, Adam])
def test_frozen_parameter_is_not_updated(opt_cls):
    p = Parameter([1.0, 2.0], name="p", trainable=False)
    q = Parameter([1.0], name="q")
    loss = (q * 3.0).sum() + (p.detach() * 1.0).sum()
    backward(loss)
    p.grad = np.ones(2, dtype=p.dtype)  # a stray gradient must still be ignored
    p.trainable = False
    opt = opt_cls([p, q], lr=0.1)
    opt.step()
    np.testing.assert_array_equal(p.data, [1.0, 2.0])
    assert q.data[0] != 1.0


def test_frozen_parameter_receives_no_gradient():
    p = Parameter([1.0, 2.0], name="p", trainable=False)
    q = Parameter([3.0], name="q")
    backward((p * q).sum())
    assert p.grad is None and q.grad is not None


def test_adam_matches_scalar_recurrence():
    grads = [0.5, -1.0, 2.0, 0.25, 0.25, -3.0, 1.0]
    with precision(np.float64):
        p = Parameter([0.0], name="p", dtype=np.float64)
        opt = Adam([p], lr=0.01)
        for g in grads:
            p.grad = np.array([g])
            opt.step()
    assert p.data[0] == pytest.approx(adam_scalar(grads, 0.01), abs=1e-12)


def test_adam_constant_gradient_approaches_lr_sign_step():
    with precision(np.float64):
        p = Parameter([0.0], name="p", dtype=np.float64)
        opt = Adam([p], lr=0.01)
        prev = 0.0
        for _ in range(50):
            p.grad = np.array([-4.0])
            opt.step()
            step, prev = p.data[0] - prev, p.data[0]
    assert step == pytest.approx(0.01, rel=1e-3)
    assert p.data[0] == pytest.approx(adam_scalar([-4.0] * 50, 0.01), abs=1e-12)


def test_adam_state_only_advances_for_parameters_with_gradients():
    a = Parameter([1.0], name="a")
    b = Parameter([1.0], name="b")
    opt = Adam([a, b], lr=0.1)
    a.grad = np.array([1.0], dtype=np.float32)
    opt.step()
    assert b.data[0] == 1.0 and id(b) not in opt.state
    assert opt.state[id(a)]["t"] == 1


def test_step_without_gradients_warns_instead_of_failing():
    p = Parameter([1.0], name="p")
    with pytest.warns(RuntimeWarning):
        Adam([p], lr=0.1).step()
    np.testing.assert_array_equal(p.data, [1.0])


def test_freezing_does_not_change_forward_values():
    rng = np.random.default_rng(8)
    w = rng.normal(size=(3, 3))
    x = Tensor(rng.normal(size=(2, 3)))
    out_a = (x @ Parameter(w, name="w")).sigmoid().data
    out_b = (x @ Parameter(w, name="w", trainable=False)).sigmoid().data
    np.testing.assert_array_equal(out_a, out_b)


def test_parameter_copies_into_default_dtype():
    src = np.ones(3)
    p = Parameter(src, name="p")
    src[0] = 5
    assert p.dtype == np.float32 and p.data[0] == 1.0


# -- grad_check itself ----------------------------------------------------------------------------------
def test_grad_check_square_at_three():
    assert grad_check(lambda t: (t * t).sum(), np.array([3.0])) < 1e-6


def test_grad_check_reports_nan_distinctly():
    with pytest.raises(GradCheckNaNError):
        grad_check(lambda t: (t * np.nan).sum(), np.array([1.0]))


def test_grad_check_detects_wrong_gradient():
    def broken(t):
        out = (t * t).sum()
        original = out._backward

        def _bw(g):
            original(g * 2.0)

        out._backward = _bw
        return out

    assert grad_check(broken, np.array([1.0, 2.0])) > 0.1


def test_grad_check_sampled_coordinates():
    x = np.random.default_rng(9).normal(size=200)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert grad_check(lambda t: t.exp().sum(), x, max_coords=10) < TOL
