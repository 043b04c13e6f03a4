"""Closed-form solution of the backward heat equation for the pricing rule.

The terminal condition is represented by its value at the left grid edge and
its nonnegative grid derivative ``h'``.  Writing ``H(t, y) = E[h(y + sqrt(s) Z)]``
with ``s = sigma^2 (1 - t)`` and integrating by parts gives

    H   = h(y_0) + int h'(x) Phi((y - x)/sqrt(s)) dx
    H_y = int h'(x) q(s, x - y) dx
    H_yy = int h'(x) d/dy q(s, x - y) dx

which are Toeplitz sums on the uniform grid (evaluated by FFT) plus closed-form
contributions of affine tails beyond the grid.  The trapezoid rule applied to
these smooth integrands is spectrally accurate once ``s`` spans a few grid cells;
below that a Gauss-Hermite rule on the Hermite interpolant of ``h`` is used.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve
from scipy.special import ndtr, ndtri

from .cdf import Cdf
from .errors import InputError, InternalConsistencyError, RangeError
from .interp import hermite_eval, hermite_root, linear_eval
from .model import GridSpec, ModelParams, ValueMap, gauss_density, std_normal_pdf

CLAMP_DELTA = 1e-12
GH_NODES, GH_WEIGHTS = np.polynomial.hermite.hermgauss(64)
# below this many squared grid cells of kernel variance the trapezoid sums lose accuracy
TRAPEZOID_MIN_CELLS = 4.0


@dataclass(frozen=True)
class TerminalCondition:
    """Nondecreasing terminal pricing data on the y-grid.

    ``slope_left`` / ``slope_right`` extend ``h`` affinely beyond the grid; both
    are zero for bounded data (flat tails).
    """

    y: np.ndarray
    h: np.ndarray
    dh: np.ndarray
    slope_left: float = 0.0
    slope_right: float = 0.0
    clamped_nodes: int = 0

    def __post_init__(self):
        if self.h.shape != self.y.shape or self.dh.shape != self.y.shape:
            raise InputError("terminal condition arrays must match the grid")
        if np.any(self.dh < 0) or np.any(np.diff(self.h) < -1e-12):
            raise InputError("terminal condition must be nondecreasing")
        if self.slope_left != self.slope_right or self.slope_left < 0:
            raise InputError("affine tail extension needs one common nonnegative slope")

    @property
    def dy(self) -> float:
        return float(self.y[1] - self.y[0])

    @property
    def bounded(self) -> bool:
        return self.slope_left == 0.0 and self.slope_right == 0.0

    @property
    def h_inf(self) -> float:
        if not self.bounded:
            return math.inf
        return float(max(abs(self.h[0]), abs(self.h[-1])))

    @property
    def limits(self) -> tuple[float, float]:
        """h(-inf), h(+inf) under the tail extension."""
        if self.slope_left > 0:
            lo = -math.inf
        else:
            lo = float(self.h[0])
        hi = math.inf if self.slope_right > 0 else float(self.h[-1])
        return lo, hi

    @property
    def d2h(self) -> np.ndarray:
        return np.gradient(self.dh, self.dy, edge_order=2)

    @classmethod
    def from_function(cls, y, fn, dfn) -> "TerminalCondition":
        y = np.asarray(y, dtype=float)
        return cls(y, np.asarray(fn(y), dtype=float), np.asarray(dfn(y), dtype=float))

    @classmethod
    def linear(cls, y, slope: float) -> "TerminalCondition":
        """h(y) = slope * y with matching affine tails (unbounded test data)."""
        y = np.asarray(y, dtype=float)
        return cls(y, slope * y, np.full_like(y, slope), slope, slope)

    @classmethod
    def constant(cls, y, value: float) -> "TerminalCondition":
        y = np.asarray(y, dtype=float)
        return cls(y, np.full_like(y, value), np.zeros_like(y))


def terminal_from_cdf(P: Cdf, f_spec: ValueMap) -> TerminalCondition:
    """h(y) = f(Phi^{-1}(P(y))) together with its chain-rule derivative."""
    if np.any(np.diff(P.P) < -1e-14) or np.any(np.diff(P.Q) > 1e-14):
        raise InputError("distribution function is not monotone")
    lower = P.P <= 0.5
    p = np.where(lower, P.P, P.Q)
    clamped = int(np.count_nonzero(p[1:-1] <= 0.0))
    p = np.maximum(p, CLAMP_DELTA)
    score = np.where(lower, ndtri(p), -ndtri(p))
    h = np.empty_like(score)
    dh = np.zeros_like(score)
    inner = slice(1, -1)
    h[inner] = f_spec(score[inner])
    dh[inner] = f_spec.derivative(score[inner]) * P.dens[inner] / std_normal_pdf(score[inner])
    # the end nodes carry P = 0 and P = 1 exactly: use the limits of f there
    lo, hi = f_spec.limits
    h[0], h[-1] = lo, hi
    h = np.maximum.accumulate(h)
    return TerminalCondition(P.y.copy(), h, np.maximum(dh, 0.0), clamped_nodes=clamped)


def _rows_trapezoid(term: TerminalCondition, variances: np.ndarray):
    """H, H_y, H_yy rows for each kernel variance by FFT Toeplitz sums."""
    y = term.y
    n = y.size
    dy = term.dy
    w = np.full(n, dy)
    w[0] = w[-1] = 0.5 * dy
    beta = term.slope_left
    g = (w * (term.dh - beta))[None, :]
    offsets = np.arange(-(n - 1), n) * dy
    s = np.asarray(variances, dtype=float)[:, None]
    rs = np.sqrt(s)
    k_cdf = ndtr(offsets[None, :] / rs)
    k_den = gauss_density(s, offsets[None, :])
    k_der = -k_den * offsets[None, :] / s
    sl = slice(n - 1, 2 * n - 1)
    H = term.h[0] + fftconvolve(g, k_cdf, axes=1)[:, sl]
    Hy = fftconvolve(g, k_den, axes=1)[:, sl]
    Hyy = fftconvolve(g, k_der, axes=1)[:, sl]
    # rows where roundoff produced non-positive slopes are redone by direct summation
    bad = np.where(np.any(Hy <= 0.0, axis=1) & np.any(term.dh > 0))[0]
    for j in bad:
        Hy[j] = np.convolve(g[0], k_den[j])[sl]
    if term.slope_left:
        # the linear part beta*y is reproduced exactly by the heat flow
        beta = term.slope_left
        H = H + beta * (y[None, :] - y[0])
        Hy = Hy + beta
    return H, Hy, Hyy


def _row_gauss_hermite(term: TerminalCondition, variance: float):
    """Row by 64-node Gauss-Hermite quadrature on the Hermite interpolant of h."""
    y = term.y
    dy = term.dy
    pts = y[:, None] + math.sqrt(2.0 * variance) * GH_NODES[None, :]
    wts = GH_WEIGHTS / math.sqrt(math.pi)
    d2h = term.d2h
    if term.bounded:
        d2h = d2h.copy()
        d2h[0] = d2h[-1] = 0.0
    H = hermite_eval(y[0], dy, term.h, term.dh, pts) @ wts
    slope, curv = hermite_eval(y[0], dy, term.dh, d2h, pts, deriv=True)
    if term.bounded:
        outside = (pts < y[0]) | (pts > y[-1])
        slope = np.where(outside, 0.0, slope)
        curv = np.where(outside, 0.0, curv)
    return H, slope @ wts, curv @ wts


@dataclass
class PricingRuleField:
    """Pricing rule H and its first two y-derivatives on a (t, y) lattice.

    Rows are stored for mesh times up to ``1 - eps_terminal``; other times
    (including the refined nodes closer to 1) are computed on demand and cached.
    """

    terminal: TerminalCondition
    sigma: float
    eps_terminal: float
    mesh: np.ndarray
    times: np.ndarray
    H: np.ndarray
    Hy: np.ndarray
    Hyy: np.ndarray
    _cache: OrderedDict = field(default_factory=OrderedDict, repr=False)

    @property
    def y(self) -> np.ndarray:
        return self.terminal.y

    @property
    def dy(self) -> float:
        return self.terminal.dy

    @property
    def h_inf(self) -> float:
        return self.terminal.h_inf

    @property
    def bound_constant(self) -> float:
        return self.h_inf * math.sqrt(2.0 / (self.sigma ** 2 * math.pi))

    def _compute_row(self, t: float):
        s = self.sigma ** 2 * (1.0 - t)
        if s >= TRAPEZOID_MIN_CELLS * self.dy ** 2:
            H, Hy, Hyy = _rows_trapezoid(self.terminal, np.array([s]))
            return H[0], Hy[0], Hyy[0]
        return _row_gauss_hermite(self.terminal, s)

    def row(self, t: float):
        """(H, H_y, H_yy) arrays on the y-grid at time ``t``."""
        t = float(t)
        j = int(np.searchsorted(self.times, t))
        for k in (j - 1, j):
            if 0 <= k < self.times.size and abs(self.times[k] - t) < 1e-13:
                return self.H[k], self.Hy[k], self.Hyy[k]
        if t >= 1.0 - 1e-15:
            term = self.terminal
            d2h = term.d2h
            return term.h, term.dh, d2h
        if t < 0.0 or t > 1.0:
            raise RangeError(f"time {t} outside [0, 1]")
        key = round(t, 15)
        hit = self._cache.get(key)
        if hit is None:
            hit = self._compute_row(t)
            self._cache[key] = hit
            if len(self._cache) > 4096:
                self._cache.popitem(last=False)
        return hit

    def H_at(self, t, y):
        H, Hy, _ = self.row(t)
        return hermite_eval(self.y[0], self.dy, H, Hy, y)

    def Hy_at(self, t, y):
        _, Hy, Hyy = self.row(t)
        val = hermite_eval(self.y[0], self.dy, Hy, Hyy, y, extrapolate="linear" if not self.terminal.bounded else "constant")
        return val

    def Hyy_at(self, t, y):
        return linear_eval(self.y[0], self.dy, self.row(t)[2], y)

    def eval(self, t, y):
        """H, H_y, H_yy at points ``y`` and a single time ``t``."""
        H, Hy, Hyy = self.row(t)
        y0, dy = self.y[0], self.dy
        ext = "constant" if self.terminal.bounded else "linear"
        return (hermite_eval(y0, dy, H, Hy, y),
                hermite_eval(y0, dy, Hy, Hyy, y, extrapolate=ext),
                linear_eval(y0, dy, Hyy, y))

    def scaled(self, factor: float) -> "PricingRuleField":
        """Field multiplied by a constant (used as a tampered negative control)."""
        term = self.terminal
        scaled_term = TerminalCondition(term.y, factor * term.h, factor * term.dh,
                                        factor * term.slope_left, factor * term.slope_right)
        return PricingRuleField(scaled_term, self.sigma, self.eps_terminal, self.mesh, self.times,
                                factor * self.H, factor * self.Hy, factor * self.Hyy)


def solve_heat(term: TerminalCondition, params: ModelParams, grid: GridSpec,
               mesh: np.ndarray | None = None, check_bounds: bool = True,
               tol: float = 1e-6) -> PricingRuleField:
    """Pricing rule for terminal data ``term`` on the mesh of ``grid``."""
    if mesh is None:
        mesh = grid.times()
    stand_off = 1.0 - grid.eps_terminal
    times = mesh[mesh <= stand_off + 1e-12]
    variances = params.sigma ** 2 * (1.0 - times)
    H, Hy, Hyy = _rows_trapezoid(term, variances)
    small = variances < TRAPEZOID_MIN_CELLS * term.dy ** 2
    for j in np.where(small)[0]:
        H[j], Hy[j], Hyy[j] = _row_gauss_hermite(term, variances[j])
    fld = PricingRuleField(term, params.sigma, grid.eps_terminal, np.asarray(mesh), times, H, Hy, Hyy)
    if check_bounds:
        problems = field_bound_report(fld, tol)
        if problems:
            raise InternalConsistencyError("; ".join(problems))
    return fld


def field_bound_report(fld: PricingRuleField, tol: float = 1e-6) -> list[str]:
    """List of violated analytic bounds on the stored rows (empty when all hold)."""
    term = fld.terminal
    problems = []
    if not term.bounded:
        return ["terminal data is unbounded; bounds do not apply"]
    if term.h[-1] - term.h[0] <= 0:
        return problems if np.allclose(fld.Hy, 0.0) else ["constant terminal data but nonzero slope"]
    h_inf = fld.h_inf
    tau = 1.0 - fld.times
    if np.max(np.abs(fld.H)) > h_inf + tol:
        problems.append("maximum principle |H| <= h_inf violated")
    if np.min(fld.Hy) <= 0.0:
        problems.append("H_y not strictly positive")
    ratio = fld.Hy * np.sqrt(tau)[:, None]
    if np.max(ratio) > fld.bound_constant + tol:
        problems.append(f"H_y*sqrt(1-t) = {np.max(ratio):.6g} exceeds C_h = {fld.bound_constant:.6g}")
    curv_cap = 2.0 * h_inf / (fld.sigma ** 2 * tau)
    if np.any(np.abs(fld.Hyy) > curv_cap[:, None] + tol):
        problems.append("|H_yy| exceeds 2 h_inf / (sigma^2 (1 - t))")
    dy = fld.dy
    mass = dy * (fld.Hy.sum(axis=1) - 0.5 * (fld.Hy[:, 0] + fld.Hy[:, -1]))
    target = term.h[-1] - term.h[0]
    if np.max(np.abs(mass - target)) > 1e-4:
        problems.append("integral of H_y differs from the total variation of h by more than 1e-4")
    return problems


def invert_terminal(fld: PricingRuleField, v):
    """y with H(1, y) = v for each entry of ``v``."""
    term = fld.terminal
    return _invert_row(term.y, term.h, term.dh, term, v, tol_scale=max(1.0, float(np.max(np.abs(term.h)))))


def _invert_row(y, f, d, term: TerminalCondition, v, tol_scale=1.0):
    v = np.asarray(v, dtype=float)
    lo, hi = term.limits
    if np.any(v <= lo) or np.any(v >= hi):
        raise RangeError(f"value outside the open range ({lo}, {hi}) of the pricing rule")
    dy = y[1] - y[0]
    out = np.empty(v.shape)
    below = v < f[0]
    above = v > f[-1]
    inside = ~(below | above)
    if np.any(inside):
        out[inside] = hermite_root(y[0], dy, f, d, v[inside])
    if np.any(below):
        if d[0] <= 0:
            raise RangeError("value below the grid range of the pricing rule")
        out[below] = y[0] + (v[below] - f[0]) / d[0]
    if np.any(above):
        if d[-1] <= 0:
            raise RangeError("value above the grid range of the pricing rule")
        out[above] = y[-1] + (v[above] - f[-1]) / d[-1]
    return out


def xi_curve(fld: PricingRuleField, v, times=None):
    """Level curve xi(t) solving H(t, xi(t)) = v; shape (len(times),) + shape(v)."""
    if times is None:
        times = np.append(fld.times, fld.mesh[fld.mesh > fld.times[-1]])
    v = np.asarray(v, dtype=float)
    out = np.empty((len(times),) + v.shape)
    for j, t in enumerate(times):
        H, Hy, _ = fld.row(t)
        out[j] = _invert_row(fld.y, H, Hy, fld.terminal, v)
    return out
