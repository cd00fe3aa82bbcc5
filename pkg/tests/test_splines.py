import numpy as np
import pytest

from dynsl.exceptions import DomainError
from dynsl.splines import NaturalCubicBasis, basis_from_times, natural_cubic_basis


def fd(basis, x, order, h=1e-5):
    if order == 1:
        return (basis.design(x + h) - basis.design(x - h)) / (2 * h)
    return (basis.design(x + h) - 2 * basis.design(x) + basis.design(x - h)) / h**2


@pytest.fixture
def basis(rng):
    times = rng.uniform(0, 10, 200)
    return basis_from_times(times, df=4)


def test_dimensions_and_knot_count(basis):
    assert basis.df == 4
    assert len(basis.interior_knots) == 3
    x = np.linspace(0, 10, 7)
    assert basis.design(x).shape == (7, 4)


def test_continuity_across_knots(basis):
    for knot in (*basis.interior_knots, *basis.boundary_knots):
        h = 1e-6
        left = basis.design(knot - h)
        right = basis.design(knot + h)
        np.testing.assert_allclose(left, right, atol=1e-4)
        np.testing.assert_allclose(fd(basis, knot - 1e-4, 1), fd(basis, knot + 1e-4, 1), atol=1e-3)
        np.testing.assert_allclose(fd(basis, knot - 1e-3, 2), fd(basis, knot + 1e-3, 2), atol=1e-2)


def test_second_derivative_vanishes_outside_boundary(basis):
    # wide step: the function is exactly affine out there, so no truncation
    # error, and a small h would amplify rounding noise past the tolerance
    lo, hi = basis.boundary_knots
    for x in (lo - 1.0, lo - 3.0, hi + 1.0, hi + 4.0):
        assert np.max(np.abs(fd(basis, x, 2, h=1e-2))) < 1e-6


def test_df_one_is_linear_column(rng):
    times = rng.uniform(0, 5, 30)
    design = natural_cubic_basis(times, df=1)
    np.testing.assert_allclose(design[:, 0], times)
    assert design.shape == (30, 1)


def test_quantile_knots():
    times = np.arange(1.0, 101.0)
    b = basis_from_times(times, df=4)
    np.testing.assert_allclose(b.interior_knots, np.quantile(times, [0.25, 0.5, 0.75]))
    assert b.boundary_knots == (1.0, 100.0)


def test_df_exceeding_distinct_times_raises():
    with pytest.raises(DomainError):
        basis_from_times([1.0, 2.0, 1.0], df=3)


def test_degenerate_quantiles_raise():
    times = np.array([1.0] * 50 + [2.0] * 2)
    with pytest.raises(DomainError):
        basis_from_times(times, df=3)


def test_linear_beyond_boundary(basis):
    # values outside the boundary grow affinely
    lo, hi = basis.boundary_knots
    xs = np.array([hi + 1.0, hi + 2.0, hi + 3.0])
    cols = basis.design(xs)
    d1 = np.diff(cols, axis=0)
    np.testing.assert_allclose(d1[0], d1[1], atol=1e-8)


def test_explicit_knots_validation():
    with pytest.raises(DomainError):
        NaturalCubicBasis(interior_knots=(5.0,), boundary_knots=(6.0, 1.0))
    with pytest.raises(DomainError):
        NaturalCubicBasis(interior_knots=(0.5,), boundary_knots=(1.0, 4.0))
