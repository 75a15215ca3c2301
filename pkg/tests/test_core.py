import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedcomloc.core import axpy, derive_stream, l2_norm

finite_floats = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False, allow_infinity=False)


def vectors(dim):
    return st.lists(finite_floats, min_size=dim, max_size=dim).map(np.array)


def test_axpy_examples():
    npt.assert_array_equal(axpy(2.0, np.array([1.0, 2.0]), np.array([0.0, 1.0])), [2.0, 5.0])
    npt.assert_array_equal(axpy(0.0, np.array([7.0, 7.0]), np.array([3.0, 4.0])), [3.0, 4.0])
    npt.assert_array_equal(axpy(-1.0, np.array([1.0, 1.0]), np.array([1.0, 1.0])), [0.0, 0.0])


def test_axpy_rejects_length_mismatch():
    with pytest.raises(ValueError, match="length mismatch"):
        axpy(1.0, np.zeros(3), np.zeros(4))


def test_axpy_rejects_nonfinite_scale():
    with pytest.raises(ValueError, match="finite"):
        axpy(np.nan, np.zeros(2), np.zeros(2))


@given(a=finite_floats, b=finite_floats, x=vectors(5), y=vectors(5))
@settings(max_examples=200)
def test_axpy_bilinear(a, b, x, y):
    combo = axpy(a, x, axpy(b, y, np.zeros(5)))
    npt.assert_allclose(combo, a * x + b * y, rtol=1e-12, atol=1e-9)
    npt.assert_allclose(
        axpy(a + b, x, np.zeros(5)),
        axpy(a, x, np.zeros(5)) + axpy(b, x, np.zeros(5)),
        rtol=1e-12,
        atol=1e-9,
    )


def test_l2_norm_examples():
    assert l2_norm(np.array([3.0, 4.0])) == 5.0
    assert l2_norm(np.zeros(3)) == 0.0
    assert l2_norm(np.ones(4)) == 2.0


@given(c=finite_floats, x=vectors(6))
@settings(max_examples=200)
def test_l2_norm_absolute_homogeneity(c, x):
    npt.assert_allclose(l2_norm(c * x), abs(c) * l2_norm(x), rtol=1e-12, atol=1e-9)


def test_l2_norm_zero_iff_zero_vector():
    assert l2_norm(np.zeros(5)) == 0.0
    assert l2_norm(np.array([0.0, 1e-150, 0.0])) > 0.0


def test_derive_stream_is_reproducible():
    a = derive_stream(42, "coins").random(100)
    b = derive_stream(42, "coins").random(100)
    npt.assert_array_equal(a, b)


def test_derive_stream_labels_are_independent():
    a = derive_stream(42, "coins").random(100)
    b = derive_stream(42, "quant/client-3").random(100)
    assert not np.array_equal(a, b)


def test_derive_stream_seed_sensitivity():
    a = derive_stream(42, "coins").random(100)
    b = derive_stream(43, "coins").random(100)
    assert not np.array_equal(a, b)
