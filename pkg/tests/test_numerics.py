import numpy as np
import pytest
from hypothesis import given, strategies as st

from tdhtr.exceptions import DimensionError, DomainError, NumericError
from tdhtr.numerics import (Rng, bernoulli_vector, elementwise, finite_diff_grad, leaky_relu,
                            leaky_relu_grad, matmul, matmul_backward, relative_error, sigmoid,
                            sigmoid_grad, tanh, tanh_grad)


def test_sigmoid_matches_logistic():
    x = np.linspace(-30, 30, 101)
    assert np.allclose(sigmoid(x), 1 / (1 + np.exp(-x)), atol=1e-15)
    assert sigmoid(np.array(0.0)) == 0.5


@pytest.mark.parametrize("fn,grad", [(sigmoid, sigmoid_grad), (tanh, tanh_grad)])
def test_activation_grads_from_output(fn, grad, rng):
    x = rng.normal(size=7)
    fd = finite_diff_grad(lambda z: fn(z).sum(), x.copy())
    assert relative_error(grad(fn(x)), fd) < 1e-8


def test_leaky_relu():
    x = np.array([-2.0, 0.0, 3.0])
    assert np.array_equal(leaky_relu(x, 0.2), [-0.4, 0.0, 3.0])
    assert np.array_equal(leaky_relu_grad(x, 0.2), [0.2, 1.0, 1.0])


def test_matmul_shapes_and_backward(rng):
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    assert matmul(a, b).shape == (3, 2)
    with pytest.raises(DimensionError):
        matmul(a, a)
    r = rng.normal(size=(3, 2))
    da, db = matmul_backward(a, b, r)
    assert relative_error(da, finite_diff_grad(lambda z: (matmul(z, b) * r).sum(), a.copy())) < 1e-8
    assert relative_error(db, finite_diff_grad(lambda z: (matmul(a, z) * r).sum(), b.copy())) < 1e-8


def test_elementwise_dispatch():
    x = np.array([1.0, -1.0])
    assert np.array_equal(elementwise("add", x, x), 2 * x)
    assert np.array_equal(elementwise("mul", x, x), x * x)
    with pytest.raises(DomainError):
        elementwise("nope", x)


def test_rng_streams_independent_and_reproducible():
    a, b = Rng(3).child("shuffle"), Rng(3).child("shuffle")
    assert np.array_equal(a.uniform(5), b.uniform(5))
    c = Rng(3).child("td_image")
    assert not np.array_equal(Rng(3).child("shuffle").uniform(5), c.uniform(5))


def test_rng_state_round_trip():
    r = Rng(11, "x")
    r.uniform(3)
    state = r.get_state()
    first = r.uniform(4)
    r.set_state(state)
    assert np.array_equal(first, r.uniform(4))


def test_bernoulli_vector_bounds():
    r = Rng(0)
    assert bernoulli_vector(r, 100, 1.0).all()
    assert not bernoulli_vector(r, 100, 0.0).any()
    with pytest.raises(DomainError):
        bernoulli_vector(r, 3, 1.5)


def test_finite_diff_requires_float64():
    with pytest.raises((DomainError, TypeError, ValueError)):
        finite_diff_grad(lambda z: z.sum(), np.ones(3, np.float32))


def test_finite_diff_rejects_nonfinite():
    with pytest.raises(NumericError):
        with np.errstate(all="ignore"):
            finite_diff_grad(lambda z: np.log(z).sum(), np.array([0.0, 1.0]))


def test_finite_diff_restores_input(rng):
    x = rng.normal(size=5)
    before = x.copy()
    finite_diff_grad(lambda z: (z ** 3).sum(), x)
    assert np.array_equal(x, before)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=6))
def test_relative_error_symmetric_and_zero_on_equal(vals):
    a = np.array(vals)
    assert relative_error(a, a) == 0.0
    b = a + 0.5
    assert relative_error(a, b) == relative_error(b, a)
