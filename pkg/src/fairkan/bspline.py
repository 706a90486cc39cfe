"""Uniform B-spline bases via the Cox-de Boor recursion, vectorized.

The grid is a uniform knot vector on [lo, hi] extended by `order` extra
knots on each side (no knot clamping), so every basis function is a shifted
copy of the same bump and the recursion never divides by zero. A grid with
``intervals`` interior intervals and degree ``order`` carries
``intervals + order`` basis functions.
"""

from __future__ import annotations

import numpy as np


def uniform_knots(intervals: int = 5, order: int = 3,
                  lo: float = -1.0, hi: float = 1.0) -> np.ndarray:
    """Extended uniform knot vector, length intervals + 2*order + 1."""
    if intervals < 1 or order < 0:
        raise ValueError("need intervals >= 1 and order >= 0")
    if not hi > lo:
        raise ValueError(f"empty domain [{lo}, {hi}]")
    h = (hi - lo) / intervals
    return lo + h * np.arange(-order, intervals + order + 1)


def n_bases(intervals: int, order: int) -> int:
    return intervals + order


def spline_domain(knots: np.ndarray, order: int) -> tuple[float, float]:
    """Interior domain [lo, hi] on which the bases sum to one."""
    return float(knots[order]), float(knots[-order - 1])


def bspline_basis(x, knots: np.ndarray, order: int) -> np.ndarray:
    """All basis values at x; shape x.shape + (n_bases,).

    x outside the interior domain is clamped to the boundary, so the
    returned values always form a partition of unity.
    """
    knots = np.asarray(knots, float)
    x = np.asarray(x, float)
    lo, hi = spline_domain(knots, order)
    xc = np.clip(x, lo, hi)[..., None]
    b = ((xc >= knots[:-1]) & (xc < knots[1:])).astype(float)
    for k in range(1, order + 1):
        left = (xc - knots[:-k - 1]) / (knots[k:-1] - knots[:-k - 1]) * b[..., :-1]
        right = (knots[k + 1:] - xc) / (knots[k + 1:] - knots[1:-k]) * b[..., 1:]
        b = left + right
    return b


def bspline_basis_deriv(x, knots: np.ndarray, order: int):
    """(bases, first derivatives) at x, each shape x.shape + (n_bases,).

    Derivatives are evaluated at the clamped point; the caller is in charge
    of zeroing them outside the domain if it wants clamp semantics.
    """
    if order < 1:
        b = bspline_basis(x, knots, order)
        return b, np.zeros_like(b)
    knots = np.asarray(knots, float)
    x = np.asarray(x, float)
    lo, hi = spline_domain(knots, order)
    xc = np.clip(x, lo, hi)[..., None]
    b = ((xc >= knots[:-1]) & (xc < knots[1:])).astype(float)
    for k in range(1, order):
        left = (xc - knots[:-k - 1]) / (knots[k:-1] - knots[:-k - 1]) * b[..., :-1]
        right = (knots[k + 1:] - xc) / (knots[k + 1:] - knots[1:-k]) * b[..., 1:]
        b = left + right
    # b now holds the degree (order-1) bases; one more step for values,
    # the standard difference formula for derivatives.
    p = order
    left = (xc - knots[:-p - 1]) / (knots[p:-1] - knots[:-p - 1]) * b[..., :-1]
    right = (knots[p + 1:] - xc) / (knots[p + 1:] - knots[1:-p]) * b[..., 1:]
    values = left + right
    deriv = p * (b[..., :-1] / (knots[p:-1] - knots[:-p - 1])
                 - b[..., 1:] / (knots[p + 1:] - knots[1:-p]))
    return values, deriv
