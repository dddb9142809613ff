import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from tdcomp import linalg
from tdcomp.errors import DimensionError, InvalidInputError, SingularMatrixError

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def low_rank(seed, m, n, r):
    g = np.random.default_rng(seed)
    return g.standard_normal((m, r)) @ g.standard_normal((r, n))


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), m=st.integers(1, 6), n=st.integers(1, 6),
       r=st.integers(1, 6))
def test_pinv_satisfies_penrose_conditions(seed, m, n, r):
    a = low_rank(seed, m, n, min(r, m, n))
    x = linalg.pinv(a)
    scale = max(1.0, np.linalg.norm(a) * np.linalg.norm(x)) ** 2
    assert np.allclose(a @ x @ a, a, atol=1e-9 * scale)
    assert np.allclose(x @ a @ x, x, atol=1e-9 * scale)
    assert np.allclose((a @ x).T, a @ x, atol=1e-9 * scale)
    assert np.allclose((x @ a).T, x @ a, atol=1e-9 * scale)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), m=st.integers(1, 6), n=st.integers(1, 6),
       r=st.integers(1, 6))
def test_rank_of_constructed_product(seed, m, n, r):
    r = min(r, m, n)
    assert linalg.rank(low_rank(seed, m, n, r)) == r


def test_pinv_matches_inverse_for_square_nonsingular():
    a = np.array([[2.0, 1.0], [1.0, 3.0]])
    assert np.allclose(linalg.pinv(a), np.linalg.inv(a), atol=1e-14)


def test_pinv_of_zero_is_zero_transpose():
    assert np.array_equal(linalg.pinv(np.zeros((2, 3))), np.zeros((3, 2)))


def test_rank_tolerance_drops_tiny_singular_values():
    a = np.diag([1.0, 1e-12])
    assert linalg.rank(a) == 1
    assert linalg.rank(a, tol=1e-14) == 2


def test_as_matrix_shapes_and_validation():
    assert linalg.as_matrix(3.0).shape == (1, 1)
    assert linalg.as_matrix([1, 2, 3]).shape == (1, 3)
    with pytest.raises(DimensionError):
        linalg.as_matrix(np.zeros((2, 2, 2)))
    with pytest.raises(InvalidInputError):
        linalg.as_matrix([[np.nan]])


@settings(max_examples=50, deadline=None)
@given(arrays(float, (4, 4), elements=finite))
def test_extreme_eigenvalues_of_symmetric_part(a):
    s = a + a.T
    w = np.linalg.eigvalsh(s)
    assert linalg.min_eig_sym(s) == pytest.approx(w[0], abs=1e-9)
    assert linalg.max_eig_sym(s) == pytest.approx(w[-1], abs=1e-9)


def test_min_eig_rejects_asymmetric():
    with pytest.raises(InvalidInputError):
        linalg.min_eig_sym([[0.0, 1.0], [0.0, 0.0]])


def test_eig_spectrum_helpers():
    sp = linalg.eig([[0.1, 1.0], [1.0, -2.0]])
    assert sp.contains(0.5) and sp.contains(-2.4)
    assert sp.max_real == pytest.approx(0.5)
    assert sp.min_real == pytest.approx(-2.4)


def test_solve_and_singular_error():
    x = linalg.solve([[2.0, 0.0], [0.0, 4.0]], [[2.0], [8.0]])
    assert np.allclose(x, [[1.0], [2.0]])
    with pytest.raises(SingularMatrixError) as info:
        linalg.solve([[1.0, 1.0], [1.0, 1.0]], [[1.0], [1.0]])
    assert info.value.cond > 1e15


def test_block_diag_places_blocks():
    out = linalg.block_diag(np.ones((1, 2)), 2 * np.ones((2, 1)))
    assert out.shape == (3, 3)
    assert np.array_equal(out[:1, :2], np.ones((1, 2)))
    assert np.array_equal(out[1:, 2:], 2 * np.ones((2, 1)))
    assert out[0, 2] == 0.0
