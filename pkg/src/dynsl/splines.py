"""Natural cubic spline basis for biomarker time trends.

The basis spans the space of cubic splines that are linear beyond the
boundary knots.  With ``df`` requested columns there are ``df - 1``
interior knots placed at equally spaced quantiles of the supplied times;
``df = 1`` degenerates to the plain linear column.  No intercept column
is included (the mixed model adds its own).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DomainError

__all__ = ["NaturalCubicBasis", "natural_cubic_basis"]


@dataclass(frozen=True)
class NaturalCubicBasis:
    """Evaluable natural cubic spline basis with frozen knots."""

    interior_knots: tuple
    boundary_knots: tuple
    df: int = field(init=False)

    def __post_init__(self):
        lo, hi = self.boundary_knots
        if not lo < hi:
            raise DomainError(f"boundary knots must satisfy lo < hi, got {self.boundary_knots}")
        knots = (lo, *self.interior_knots, hi)
        if np.any(np.diff(knots) <= 0):
            raise DomainError(f"knots must be strictly increasing inside the boundary, got {knots}")
        object.__setattr__(self, "df", len(self.interior_knots) + 1)

    @property
    def all_knots(self) -> np.ndarray:
        return np.array([self.boundary_knots[0], *self.interior_knots, self.boundary_knots[1]])

    def design(self, times) -> np.ndarray:
        """Evaluate the ``df`` basis columns at ``times`` (vectorized).

        Column 0 is the identity; the remaining columns are the usual
        truncated-power differences whose cubic and quadratic terms cancel
        outside the boundary knots.
        """
        x = np.atleast_1d(np.asarray(times, dtype=float))
        knots = self.all_knots
        K = len(knots)
        out = np.empty((x.size, self.df))
        out[:, 0] = x
        if K > 2:
            last = knots[-1]
            denom_last = last - knots[-2]
            cube = np.clip(x[:, None] - knots[None, :], 0.0, None) ** 3
            d = (cube[:, :-1] - cube[:, -1:]) / (last - knots[:-1])
            d_last = d[:, -1]
            for k in range(K - 2):
                out[:, k + 1] = d[:, k] - d_last
        return out


def natural_cubic_basis(times, df: int, boundary=None) -> np.ndarray:
    """Design matrix of a natural cubic spline fitted to ``times``.

    Interior knots sit at the ``i / df`` quantiles of the supplied times,
    ``i = 1, ..., df - 1``; the boundary defaults to their range.
    """
    times = np.asarray(times, dtype=float)
    basis = basis_from_times(times, df, boundary)
    return basis.design(times)


def basis_from_times(times, df: int, boundary=None) -> NaturalCubicBasis:
    """Choose knots from observed times and return the frozen basis."""
    times = np.asarray(times, dtype=float)
    if df < 1:
        raise DomainError(f"df must be >= 1, got {df}")
    distinct = np.unique(times)
    if df > distinct.size:
        raise DomainError(f"df={df} exceeds the {distinct.size} distinct time(s) supplied")
    if boundary is None:
        boundary = (float(distinct[0]), float(distinct[-1]))
    if df == 1:
        return NaturalCubicBasis(interior_knots=(), boundary_knots=tuple(boundary))
    qs = np.arange(1, df) / df
    interior = np.quantile(times, qs)
    knots = np.concatenate(([boundary[0]], interior, [boundary[1]]))
    if np.any(np.diff(knots) <= 0):
        raise DomainError(
            f"df={df} produces coincident knots {tuple(knots)} for these times; lower df"
        )
    return NaturalCubicBasis(interior_knots=tuple(float(k) for k in interior), boundary_knots=tuple(boundary))
