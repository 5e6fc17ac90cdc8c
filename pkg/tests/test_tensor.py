import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fgi import tensor as T

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def test_elementwise_examples():
    assert T.elementwise("add", T.tensor([1, 2]), T.tensor([3, 4])).tolist() == [4, 6]
    assert T.elementwise("sub", T.tensor([5]), T.tensor([5])).tolist() == [0]
    assert T.elementwise("mul", T.tensor([2, 3]), T.scalar(0.5)).tolist() == [1.0, 1.5]
    assert T.elementwise("mul", T.scalar(0.5), T.tensor([2, 3])).shape == (2,)


def test_elementwise_rejects_general_broadcast():
    with pytest.raises(T.ShapeError):
        T.elementwise("add", T.tensor([1, 2]), T.tensor([1, 2, 3]))
    with pytest.raises(T.ShapeError):
        T.elementwise("add", T.zeros((2, 1)), T.zeros((1, 2)))


def test_div_by_zero_is_ieee():
    out = T.elementwise("div", T.tensor([1.0, -1.0, 0.0]), T.tensor([0.0, 0.0, 0.0]))
    assert out[0] == np.inf and out[1] == -np.inf and np.isnan(out[2])


def test_map_unary_examples():
    assert T.map_unary("gt0", T.tensor([-1.0, 0.0, 0.5])).tolist() == [0.0, 0.0, 1.0]
    assert T.map_unary("tanh", T.tensor([0.0])).tolist() == [0.0]
    assert T.map_unary("exp", T.tensor([1.0]))[0] == 2.718281828459045
    assert T.map_unary("gt0", T.tensor([-0.0]))[0] == 0.0
    assert T.map_unary("exp", T.tensor([1000.0]))[0] == np.inf


def test_matmul_examples():
    a = T.tensor([[1, 2], [3, 4]])
    assert np.array_equal(T.matmul(T.tensor(np.eye(2)), a), a)
    assert T.matmul(T.tensor([[1, 2]]), T.tensor([[3], [4]])).tolist() == [[11]]
    assert np.array_equal(T.matmul(T.zeros((2, 3)), T.ones((3, 4))), np.zeros((2, 4)))


def test_matmul_shape_errors():
    with pytest.raises(T.ShapeError):
        T.matmul(T.zeros((2, 3)), T.zeros((2, 3)))
    with pytest.raises(T.ShapeError):
        T.matmul(T.zeros((3,)), T.zeros((3, 1)))


def test_reduce_sum_examples():
    assert T.reduce_sum(T.tensor([1, 2, 3])) == 6
    assert T.reduce_sum(T.tensor([[1, 2], [3, 4]]), axis=0).tolist() == [4, 6]
    assert T.reduce_sum(T.tensor([])) == 0
    with pytest.raises(T.ShapeError):
        T.reduce_sum(T.tensor([1, 2]), axis=1)


def test_results_are_read_only():
    out = T.elementwise("add", T.tensor([1.0]), T.tensor([2.0]))
    with pytest.raises(ValueError):
        out[0] = 5.0


@given(arrays(np.float64, st.integers(0, 20), elements=finite))
def test_self_subtraction_is_positive_zero(a):
    out = T.elementwise("sub", a, a)
    assert np.all(out == 0.0)
    assert not np.any(np.signbit(out))


@given(arrays(np.float64, st.integers(0, 20), elements=st.floats(allow_nan=True)))
def test_gt0_is_binary(a):
    out = T.map_unary("gt0", a)
    assert set(np.unique(out).tolist()) <= {0.0, 1.0}


@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_matmul_is_deterministic(m, k, n, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((m, k)), rng.standard_normal((k, n))
    assert T.matmul(a, b).tobytes() == T.matmul(a.copy(), b.copy()).tobytes()
