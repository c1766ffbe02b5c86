import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import matmul_loops
from pdcovidnet.errors import AxisError, ShapeError
from pdcovidnet.tensor import as_tensor, elementwise, matmul, reduce, zeros, zeros_like


class TestZeros:
    def test_values(self):
        np.testing.assert_array_equal(zeros([2, 2]), [[0, 0], [0, 0]])
        np.testing.assert_array_equal(zeros([1]), [0])
        assert reduce("sum", zeros([3, 4, 5])) == 0

    def test_dtype_and_contiguity(self):
        t = zeros([3, 4])
        assert t.dtype == np.float64 and t.flags.c_contiguous

    @pytest.mark.parametrize("shape", [[0], [2, 0], [-1, 3], []])
    def test_invalid_shape(self, shape):
        with pytest.raises(ShapeError):
            zeros(shape)


class TestElementwise:
    def test_relu_via_max(self):
        out = elementwise("max", [[-1, 2], [0, -3]], 0)
        np.testing.assert_array_equal(out, [[0, 2], [0, 0]])

    def test_additive_identity(self):
        x = np.random.default_rng(0).normal(size=(3, 4))
        np.testing.assert_array_equal(elementwise("add", x, zeros_like(x)), x)

    def test_mul(self):
        np.testing.assert_array_equal(elementwise("mul", [1, 2, 3], [4, 5, 6]), [4, 10, 18])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            elementwise("add", np.ones((2, 3)), np.ones((3, 2)))

    def test_no_broadcasting(self):
        with pytest.raises(ShapeError):
            elementwise("sub", np.ones((2, 3)), np.ones(3))

    @given(st.lists(st.floats(-1e6, 1e6), min_size=6, max_size=6),
           st.lists(st.floats(-1e6, 1e6), min_size=6, max_size=6))
    def test_commutes_with_reshape(self, a, b):
        a, b = np.array(a), np.array(b)
        for op in ("add", "sub", "mul"):
            lhs = elementwise(op, a.reshape(2, 3), b.reshape(2, 3)).reshape(-1)
            np.testing.assert_array_equal(lhs, elementwise(op, a, b))


class TestMatmul:
    def test_identity(self):
        m = np.arange(12.0).reshape(3, 4)
        np.testing.assert_array_equal(matmul(np.eye(3), m), m)

    def test_hand_computed(self):
        np.testing.assert_array_equal(matmul([[1, 2]], [[3], [4]]), [[11]])

    def test_random_against_loops(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(5, 7)), rng.normal(size=(7, 3))
        np.testing.assert_allclose(matmul(a, b), matmul_loops(a, b), rtol=0, atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 16), st.integers(1, 16), st.integers(1, 16), st.integers(0, 2**32 - 1))
    def test_matches_loops_up_to_16(self, m, k, n, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.normal(size=(m, k)), rng.normal(size=(k, n))
        np.testing.assert_allclose(matmul(a, b), matmul_loops(a, b), rtol=0, atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            matmul(np.ones((2, 3)), np.ones((2, 3)))


class TestReduce:
    def test_sum(self):
        assert reduce("sum", [1, 2, 3]) == 6

    def test_argmax_tie_breaks_low(self):
        assert reduce("argmax", [0.2, 0.5, 0.5]) == 1

    def test_mean_of_ones(self):
        assert reduce("mean", np.ones((7, 7))) == 1.0

    def test_axis(self):
        t = np.array([[1.0, 5.0], [3.0, 2.0]])
        np.testing.assert_array_equal(reduce("max", t, axis=0), [3, 5])
        np.testing.assert_array_equal(reduce("argmax", t, axis=1), [1, 0])

    def test_invalid_axis(self):
        with pytest.raises(AxisError):
            reduce("sum", np.ones((2, 2)), axis=2)


@given(st.lists(st.integers(1, 4), min_size=1, max_size=4), st.data())
def test_write_then_read_roundtrip(shape, data):
    t = zeros(shape)
    idx = tuple(data.draw(st.integers(0, s - 1)) for s in shape)
    value = data.draw(st.floats(-1e9, 1e9))
    t[idx] = value
    assert t[idx] == value
    assert np.count_nonzero(t) == (value != 0)


def test_as_tensor_scalar_becomes_rank_one():
    assert as_tensor(3.0).shape == (1,)
