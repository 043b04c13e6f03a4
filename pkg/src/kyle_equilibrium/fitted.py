"""Exponentially fitted (Scharfetter-Gummel / Chang-Cooper) tridiagonal operators."""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_banded
from scipy.special import exprel


def bernoulli_pair(drift_faces, diffusion: float, dy: float):
    """Face weights B(w) and B(-w) = B(w) + w with w = drift * dy / D and B(x) = x / (e^x - 1)."""
    w = np.asarray(drift_faces, dtype=float) * dy / diffusion
    with np.errstate(over="ignore"):
        b_plus = 1.0 / exprel(w)
    return b_plus, b_plus + w


def forward_operator(drift_faces, diffusion: float, dy: float, outer_drift=None):
    """Diagonals (lower, main, upper) of the Fokker-Planck operator.

    With ``outer_drift = (a_left, a_right)`` the two boundary faces let mass
    leave towards a zero ghost value (absorbing walls); without it the walls
    carry zero flux.

    ``drift_faces`` has shape (..., n-1); the returned arrays have shape (..., n)
    with ``lower[..., j]`` = A[j+1, j] and ``upper[..., j]`` = A[j, j+1] (last entry unused).
    Columns sum to zero, so total mass is conserved exactly.
    """
    bp, bm = bernoulli_pair(drift_faces, diffusion, dy)
    coef = diffusion / dy ** 2
    shape = bp.shape[:-1] + (bp.shape[-1] + 1,)
    main = np.zeros(shape)
    main[..., :-1] -= coef * bm
    main[..., 1:] -= coef * bp
    upper = np.zeros(shape)
    lower = np.zeros(shape)
    upper[..., :-1] = coef * bp
    lower[..., :-1] = coef * bm
    if outer_drift is not None:
        bp_l, _ = bernoulli_pair(outer_drift[0], diffusion, dy)
        _, bm_r = bernoulli_pair(outer_drift[1], diffusion, dy)
        main[..., 0] -= coef * bp_l
        main[..., -1] -= coef * bm_r
    return lower, main, upper


def backward_operator(drift_faces, diffusion: float, dy: float):
    """Diagonals of the generator (transpose of the forward operator); rows sum to zero."""
    lower, main, upper = forward_operator(drift_faces, diffusion, dy)
    return upper.copy(), main, lower.copy()


def tri_matvec(lower, main, upper, x):
    out = main * x
    out[..., :-1] += upper[..., :-1] * x[..., 1:]
    out[..., 1:] += lower[..., :-1] * x[..., :-1]
    return out


def tri_solve(lower, main, upper, rhs):
    """Solve a tridiagonal system; leading axes are independent systems solved jointly.

    Independent systems are concatenated into one banded system whose coupling
    entries between blocks are zero, so a single LAPACK call handles the batch.
    """
    shape = rhs.shape
    n = shape[-1]
    lo = np.array(lower, dtype=float).reshape(-1, n)
    up = np.array(upper, dtype=float).reshape(-1, n)
    lo[:, -1] = 0.0
    up[:, -1] = 0.0
    ab = np.zeros((3, lo.size))
    ab[0, 1:] = up.ravel()[:-1]
    ab[1] = np.broadcast_to(main, shape).ravel()
    ab[2, :-1] = lo.ravel()[:-1]
    sol = solve_banded((1, 1), ab, rhs.ravel(), overwrite_ab=True, check_finite=False)
    return sol.reshape(shape)
