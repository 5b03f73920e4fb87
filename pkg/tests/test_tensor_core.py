import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from netanomaly.tensor_core import (
    FlopCounter,
    ShapeError,
    finite_diff_grad,
    matmul,
    max_relative_error,
    softmax_rows,
)


def test_matmul_identity(rng):
    m = rng.normal(size=(2, 2))
    np.testing.assert_array_equal(matmul(np.eye(2), m), m)


def test_matmul_hand_case():
    out = matmul(np.array([[1.0, 2], [3, 4]]), np.array([[5.0, 6], [7, 8]]))
    np.testing.assert_array_equal(out, [[19, 22], [43, 50]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_matmul_counts_flops():
    c = FlopCounter()
    matmul(np.ones((1, 10)), np.ones((10, 20)), c)
    assert c.flops == 400
    matmul(np.ones((3, 4)), np.ones((4, 5)), c)
    assert c.flops == 400 + 2 * 3 * 4 * 5


@pytest.mark.parametrize(
    "row, expected",
    [([0.0, 0.0], [0.5, 0.5]), ([0.0, math.log(3.0)], [0.25, 0.75]), ([1000.0, 1000.0], [0.5, 0.5])],
)
def test_softmax_examples(row, expected):
    np.testing.assert_allclose(softmax_rows(np.array([row])), [expected], atol=1e-12)


@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 9)), elements=st.floats(-50, 50)))
def test_softmax_rows_normalized(a):
    s = softmax_rows(a)
    assert s.shape == a.shape
    assert np.all(s >= 0)
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-9)


@given(st.integers(0, 2**32 - 1))
def test_matmul_associative(seed):
    r = np.random.default_rng(seed)
    n, k, m, p = r.integers(1, 6, size=4)
    a, b, c = r.normal(size=(n, k)), r.normal(size=(k, m)), r.normal(size=(m, p))
    left = matmul(matmul(a, b), c)
    right = matmul(a, matmul(b, c))
    assert np.max(np.abs(left - right)) <= 1e-8 * max(1.0, np.max(np.abs(left)))


def test_finite_diff_square():
    g = finite_diff_grad(lambda x: float(np.sum(x**2)), np.array([[3.0]]))
    np.testing.assert_allclose(g, [[6.0]], atol=1e-6)


def test_finite_diff_linear(rng):
    c = rng.normal(size=(3, 4))
    g = finite_diff_grad(lambda x: float(np.sum(c * x)), rng.normal(size=(3, 4)))
    np.testing.assert_allclose(g, c, atol=1e-9)


def test_finite_diff_constant():
    g = finite_diff_grad(lambda x: 7.0, np.ones((2, 2)))
    np.testing.assert_array_equal(g, np.zeros((2, 2)))


def test_finite_diff_restores_input(rng):
    x = rng.normal(size=(2, 3))
    before = x.copy()
    finite_diff_grad(lambda v: float(np.sum(np.sin(v))), x)
    np.testing.assert_array_equal(x, before)


def test_finite_diff_non_finite_raises():
    with pytest.raises(FloatingPointError), np.errstate(invalid="ignore", divide="ignore"):
        finite_diff_grad(lambda x: float(np.log(x[0, 0])), np.array([[0.0]]))


def test_relative_error_metric():
    assert max_relative_error(np.array([1.0]), np.array([1.0])) == 0.0
    assert max_relative_error(np.array([0.0]), np.array([1e-12])) < 1e-5
    assert max_relative_error(np.array([1.0]), np.array([-1.0])) == 1.0
