#!/usr/bin/env python3
"""
Unit tests for the bilinear module
Symmetric forms, the spectral split, PSD ordering and operator norms over dual balls
"""

import sys
import os

import numpy as np
import pytest
from hypothesis import given, seed, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..'))

from bdglab.bilinear import (
    SymBilinearForm,
    is_psd,
    operator_norm,
    psd_gap,
    spectral_split,
    vertiii_norm,
)
from bdglab.errors import AsymmetricFormError, DimensionMismatchError, EigenDecompositionError
from bdglab.norms import INF, lp, sample_dual_unit_vectors, weighted_lp

pytestmark = pytest.mark.unit

square3 = arrays(np.float64, (3, 3), elements=st.floats(-5, 5, allow_nan=False, allow_infinity=False))


def test_evaluate_examples():
    """Identity, rank-one and symmetry"""
    I = SymBilinearForm.identity(2)
    assert I.evaluate([1.0, 0.0], [1.0, 0.0]) == pytest.approx(1.0)
    V = SymBilinearForm.outer([1.0, 2.0])
    assert V.evaluate([1.0, 0.0], [0.0, 1.0]) == pytest.approx(2.0)
    rng = np.random.default_rng(0)
    A = rng.standard_normal((4, 4))
    W = SymBilinearForm(A + A.T)
    for _ in range(10):
        x, y = rng.standard_normal(4), rng.standard_normal(4)
        assert W.evaluate(x, y) == pytest.approx(W.evaluate(y, x))


def test_evaluate_dimension_mismatch():
    """Test vectors must match the form"""
    with pytest.raises(DimensionMismatchError):
        SymBilinearForm.identity(2).evaluate([1.0, 0.0, 0.0])
    with pytest.raises(DimensionMismatchError):
        SymBilinearForm(np.ones((2, 3)))


def test_asymmetric_matrix_is_rejected():
    """Asymmetry above rounding level raises, rounding-level asymmetry is absorbed"""
    with pytest.raises(AsymmetricFormError):
        SymBilinearForm(np.array([[1.0, 2.0], [0.0, 1.0]]))
    V = SymBilinearForm(np.array([[1.0, 0.5 + 1e-15], [0.5, 1.0]]))
    np.testing.assert_array_equal(V.matrix, V.matrix.T)


def test_form_is_read_only():
    """Stored matrices cannot be mutated"""
    V = SymBilinearForm.identity(2)
    with pytest.raises(ValueError):
        V.matrix[0, 0] = 5.0


def test_form_arithmetic():
    """Addition, subtraction, negation, scaling"""
    A = SymBilinearForm(np.diag([1.0, 2.0]))
    B = SymBilinearForm(np.array([[0.0, 1.0], [1.0, 0.0]]))
    np.testing.assert_allclose((A + B).matrix, [[1.0, 1.0], [1.0, 2.0]])
    np.testing.assert_allclose((A - B).matrix, [[1.0, -1.0], [-1.0, 2.0]])
    np.testing.assert_allclose((-A).matrix, np.diag([-1.0, -2.0]))
    np.testing.assert_allclose(A.scaled(3.0).matrix, np.diag([3.0, 6.0]))
    assert A.to_list() == [[1.0, 0.0], [0.0, 2.0]]
    with pytest.raises(DimensionMismatchError):
        A + SymBilinearForm.identity(3)


def test_from_increments():
    """sum dM dM^T"""
    inc = np.array([[1.0, 0.0], [1.0, 2.0]])
    V = SymBilinearForm.from_increments(inc)
    np.testing.assert_allclose(V.matrix, [[2.0, 2.0], [2.0, 4.0]])


def test_spectral_split_diagonal():
    """diag(2, -3) splits into diag(2, 0) and diag(0, 3)"""
    split = spectral_split(SymBilinearForm(np.diag([2.0, -3.0])))
    np.testing.assert_allclose(split.plus.matrix, np.diag([2.0, 0.0]), atol=1e-12)
    np.testing.assert_allclose(split.minus.matrix, np.diag([0.0, 3.0]), atol=1e-12)
    assert not split.is_psd


def test_spectral_split_off_diagonal():
    """[[0, 1], [1, 0]] has eigenvalues +-1 and orthogonal parts"""
    split = spectral_split(SymBilinearForm(np.array([[0.0, 1.0], [1.0, 0.0]])))
    np.testing.assert_allclose(sorted(split.eigenvalues), [-1.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(split.plus.matrix, 0.5 * np.array([[1.0, 1.0], [1.0, 1.0]]), atol=1e-12)
    np.testing.assert_allclose(split.minus.matrix, 0.5 * np.array([[1.0, -1.0], [-1.0, 1.0]]), atol=1e-12)


def test_spectral_split_of_psd_form():
    """PSD forms have a vanishing minus part"""
    A = np.random.default_rng(2).standard_normal((4, 4))
    split = spectral_split(SymBilinearForm(A @ A.T))
    assert split.minus.max_abs() <= 1e-10
    assert split.is_psd


def test_spectral_split_rejects_non_finite():
    """NaN entries fail the eigensolver contract"""
    with pytest.raises(EigenDecompositionError):
        spectral_split(SymBilinearForm(np.array([[np.nan, 0.0], [0.0, 1.0]])))


@settings(max_examples=80, deadline=None)
@seed(2024)
@given(A=square3)
def test_spectral_split_properties(A):
    """plus - minus = V, both parts PSD, plus @ minus = 0"""
    V = SymBilinearForm(A + A.T)
    split = spectral_split(V)
    scale = max(1.0, V.max_abs())
    np.testing.assert_allclose(split.plus.matrix - split.minus.matrix, V.matrix, atol=1e-10 * scale)
    assert np.linalg.eigvalsh(split.plus.matrix)[0] >= -1e-10 * scale
    assert np.linalg.eigvalsh(split.minus.matrix)[0] >= -1e-10 * scale
    np.testing.assert_allclose(split.plus.matrix @ split.minus.matrix, 0.0, atol=1e-10 * scale**2)


def test_psd_order():
    """psd_gap and is_psd"""
    assert psd_gap(SymBilinearForm.identity(3).scaled(2.0), SymBilinearForm.identity(3)) == pytest.approx(1.0)
    assert is_psd(SymBilinearForm.outer([1.0, -1.0]))
    assert not is_psd(SymBilinearForm(np.diag([1.0, -0.5])))
    with pytest.raises(DimensionMismatchError):
        psd_gap(SymBilinearForm.identity(2), SymBilinearForm.identity(3))


def test_vertiii_norm():
    """Coordinate test-vector norm"""
    assert vertiii_norm(SymBilinearForm.identity(2)) == pytest.approx(6.0)
    assert vertiii_norm(SymBilinearForm.zeros(3)) == 0.0
    V = SymBilinearForm(np.array([[1.0, -2.0], [-2.0, 0.5]]))
    assert vertiii_norm(V.scaled(-3.0)) == pytest.approx(3.0 * vertiii_norm(V))
    with pytest.raises(DimensionMismatchError):
        vertiii_norm(V, lp(2, 3))


def test_operator_norm_euclidean_is_spectral_radius():
    """Certified exact for lp(2)"""
    V = SymBilinearForm(np.diag([1.0, -3.0, 2.0]))
    bound = operator_norm(V, lp(2, 3))
    assert bound.exact
    assert bound.lower == pytest.approx(3.0)
    assert bound.certified_upper == pytest.approx(3.0)
    assert abs(V.evaluate(bound.argmax)) == pytest.approx(3.0)


def test_operator_norm_weighted_euclidean():
    """Weighted lp(2): dual ball is an ellipsoid, sup = max w_i V_ii for diagonal V"""
    V = SymBilinearForm(np.diag([4.0, 1.0]))
    bound = operator_norm(V, weighted_lp(2, [4.0, 0.25]))
    assert bound.exact
    assert bound.value == pytest.approx(16.0)


def test_operator_norm_lpinf():
    """Dual ball l1: identity is exact, the swap form has a gap to max |V_ij|"""
    bound = operator_norm(SymBilinearForm.identity(3), lp(INF, 3), budget=16)
    assert bound.exact
    assert bound.value == pytest.approx(1.0)

    swap = operator_norm(SymBilinearForm(np.array([[0.0, 1.0], [1.0, 0.0]])), lp(INF, 2), budget=16)
    assert swap.lower == pytest.approx(0.5, abs=1e-9)
    assert swap.certified_upper == pytest.approx(1.0)
    assert not swap.exact
    assert swap.value == pytest.approx(1.0)


def test_operator_norm_lp1_vertices():
    """Dual ball l_inf: sup over sign vertices"""
    bound = operator_norm(SymBilinearForm.identity(3), lp(1, 3), budget=16)
    assert bound.exact
    assert bound.value == pytest.approx(3.0)


def test_operator_norm_zero_form():
    """Zero form has norm 0 in every norm"""
    bound = operator_norm(SymBilinearForm.zeros(2), lp(3, 2))
    assert bound.exact and bound.value == 0.0


def test_operator_norm_lower_dominates_samples():
    """Multistart ascent beats every sampled dual-unit test vector"""
    rng = np.random.default_rng(9)
    A = rng.standard_normal((3, 3))
    V = SymBilinearForm(A + A.T)
    spec = lp(3, 3)
    bound = operator_norm(V, spec, budget=32, rng=np.random.default_rng(1))
    tests = sample_dual_unit_vectors(spec, 2000, rng)
    assert bound.lower >= 0.999 * float(np.max(np.abs(V.quadratic(tests))))
    assert bound.certified_upper is None


def test_small_indefinite_split_is_not_psd():
    """PSD detection is relative to the size of the form"""
    split = spectral_split(SymBilinearForm(np.diag([1e-11, -1e-11])))
    assert not split.is_psd
    assert spectral_split(SymBilinearForm.outer([1e-7, 2e-7])).is_psd


@pytest.mark.parametrize("d", [2, 4, 8])
@pytest.mark.parametrize("exponent", [2, 1, INF], ids=["lp2", "lp1", "lpinf"])
def test_operator_norm_is_equivalent_to_vertiii(exponent, d):
    """operator_norm.lower / vertiii stays within [1/(40 d^2), 40 d^2] on random forms"""
    rng = np.random.default_rng(100 + d)
    spec = lp(exponent, d)
    lo, hi = 1.0 / (40.0 * d * d), 40.0 * d * d
    for i in range(12):
        A = rng.standard_normal((d, d))
        V = SymBilinearForm(A @ A.T if i % 2 == 0 else 0.5 * (A + A.T))
        ratio = operator_norm(V, spec, budget=8, rng=rng).lower / vertiii_norm(V, spec)
        assert lo <= ratio <= hi


def test_operator_norm_dimension_mismatch():
    """Form and norm must share a dimension"""
    with pytest.raises(DimensionMismatchError):
        operator_norm(SymBilinearForm.identity(2), lp(2, 3))


if __name__ == "__main__":
    pytest.main([__file__])
