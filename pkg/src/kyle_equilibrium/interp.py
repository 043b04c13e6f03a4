"""Vectorized interpolation and root finding on uniform grids."""

from __future__ import annotations

import numpy as np


def _locate(y0, dy, n, x):
    s = (x - y0) / dy
    idx = np.clip(np.floor(s).astype(np.int64), 0, n - 2)
    return idx, s - idx


def hermite_eval(y0, dy, f, d, x, deriv=False, extrapolate="linear"):
    """Cubic Hermite interpolation from nodal values ``f`` and slopes ``d``.

    Outside the grid the interpolant continues linearly with the edge slope
    (``extrapolate="linear"``) or stays at the edge value (``"constant"``).
    Returns the value, or ``(value, slope)`` when ``deriv`` is set.
    """
    f = np.asarray(f)
    d = np.asarray(d)
    x = np.asarray(x, dtype=float)
    n = f.shape[-1]
    idx, u = _locate(y0, dy, n, x)
    f0, f1 = f[..., idx], f[..., idx + 1]
    d0, d1 = d[..., idx], d[..., idx + 1]
    uc = np.clip(u, 0.0, 1.0)
    u2 = uc * uc
    om = 1.0 - uc
    val = (1.0 + 2.0 * uc) * om * om * f0 + uc * om * om * dy * d0 + u2 * (3.0 - 2.0 * uc) * f1 + u2 * (uc - 1.0) * dy * d1
    slope = (6.0 * u2 - 6.0 * uc) * (f0 - f1) / dy + (3.0 * u2 - 4.0 * uc + 1.0) * d0 + (3.0 * u2 - 2.0 * uc) * d1
    left = u < 0.0
    right = u > 1.0
    if np.any(left) or np.any(right):
        y_lo = y0
        y_hi = y0 + (n - 1) * dy
        if extrapolate == "linear":
            val = np.where(left, f[..., 0] + d[..., 0] * (x - y_lo), val)
            val = np.where(right, f[..., -1] + d[..., -1] * (x - y_hi), val)
            slope = np.where(left, d[..., 0], slope)
            slope = np.where(right, d[..., -1], slope)
        else:
            val = np.where(left, f[..., 0], val)
            val = np.where(right, f[..., -1], val)
            slope = np.where(left | right, 0.0, slope)
    if deriv:
        return val, slope
    return val


def linear_eval(y0, dy, f, x):
    """Piecewise-linear interpolation, constant beyond the grid."""
    f = np.asarray(f)
    x = np.asarray(x, dtype=float)
    n = f.shape[-1]
    idx, u = _locate(y0, dy, n, x)
    u = np.clip(u, 0.0, 1.0)
    return (1.0 - u) * f[..., idx] + u * f[..., idx + 1]


def hermite_root(y0, dy, f, d, v, tol=1e-13, max_iter=200):
    """Solve interpolant(x) = v for nondecreasing nodal data ``f``.

    ``v`` must satisfy ``f[0] <= v <= f[-1]``.  Bracketing by bisection inside
    the located cell keeps the iteration safe; a few Newton steps finish.
    """
    f = np.asarray(f, dtype=float)
    v = np.asarray(v, dtype=float)
    n = f.size
    j = np.clip(np.searchsorted(f, v, side="left"), 1, n - 1)
    lo = y0 + (j - 1) * dy
    hi = y0 + j * dy
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        below = hermite_eval(y0, dy, f, d, mid) < v
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all(hi - lo < tol * dy):
            break
    x = 0.5 * (lo + hi)
    for _ in range(3):
        val, slope = hermite_eval(y0, dy, f, d, x, deriv=True)
        step = np.where(slope > 0, (val - v) / np.where(slope > 0, slope, 1.0), 0.0)
        x_new = x - step
        x = np.where((x_new >= lo - dy) & (x_new <= hi + dy), x_new, x)
    return x


def lagrange4_weights(grid0, h, m, x):
    """Indices and weights of 4-point Lagrange (cubic) interpolation on a uniform grid."""
    x = np.asarray(x, dtype=float)
    s = (x - grid0) / h
    base = np.clip(np.floor(s).astype(np.int64) - 1, 0, m - 4)
    u = s - base
    w = np.empty(x.shape + (4,))
    nodes = np.arange(4.0)
    for a in range(4):
        term = np.ones_like(u)
        for b in range(4):
            if b != a:
                term = term * (u - nodes[b]) / (nodes[a] - nodes[b])
        w[..., a] = term
    idx = base[..., None] + np.arange(4)
    return idx, w
