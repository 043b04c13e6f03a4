"""Damped Picard (optionally Anderson-accelerated) iteration of the operator T.

T maps a distribution function P to the time-1 law of the demand process
priced by the heat-flow of h = f(Phi^{-1}(P)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cdf import Cdf
from .forward import law_Y1, validate_in_D
from .heat import PricingRuleField, solve_heat, terminal_from_cdf
from .model import GridSpec, ModelParams
from .streams import run_chunks

DIVERGENCE_STREAK = 10

__all__ = ["FixedPointResult", "apply_T", "apply_T_with_field", "solve_fixed_point",
           "solve_multi_start", "validate_in_D", "start_family", "convergence_rate"]


def apply_T_with_field(P: Cdf, params: ModelParams, grid: GridSpec) -> tuple[Cdf, PricingRuleField]:
    term = terminal_from_cdf(P, params.f_spec)
    fld = solve_heat(term, params, grid)
    return law_Y1(fld, params, grid), fld


def apply_T(P: Cdf, params: ModelParams, grid: GridSpec) -> Cdf:
    return apply_T_with_field(P, params, grid)[0]


@dataclass
class FixedPointResult:
    P_star: Cdf
    field: PricingRuleField
    residuals: list
    damping: float
    converged: bool
    iterations: int
    diagnostic: str = ""
    d_report: dict = field(default_factory=dict)
    iterates_in_D: list = field(default_factory=list)
    accelerated_steps: int = 0


def _stack(P: Cdf) -> np.ndarray:
    return np.concatenate([P.P, P.Q, P.dens])


def _unstack(y, x) -> Cdf | None:
    n = y.size
    P, Q, dens = x[:n], x[n:2 * n], x[2 * n:]
    if np.any(dens < 0) or np.any(np.diff(P) < 0) or np.any(np.diff(Q) > 0) or min(P[0], Q[-1]) < -1e-14:
        return None
    return Cdf(y, np.maximum(P, 0.0), np.maximum(Q, 0.0), dens)


def solve_fixed_point(params: ModelParams, grid: GridSpec, damping: float = 0.5, tol: float = 1e-4,
                      max_iter: int = 200, start: Cdf | None = None, anderson: bool = False,
                      anderson_depth: int = 3, callback=None) -> FixedPointResult:
    """Iterate P <- (1 - damping) P + damping T(P) from ``start`` (default Phi(./sigma)).

    Stops when the sup-norm residual ||T(P_k) - P_k|| drops to ``tol``; the
    returned ``P_star`` is that P_k, so ``||T(P_star) - P_star|| <= tol``.
    """
    if not (0.0 < damping <= 1.0):
        raise ValueError("damping must lie in (0, 1]")
    if tol <= 0 or max_iter < 1:
        raise ValueError("tol must be positive and max_iter at least 1")
    y = grid.y
    P = Cdf.gaussian(y, params.sigma) if start is None else start
    residuals = []
    in_d = []
    hist_x, hist_f = [], []
    streak = 0
    accelerated = 0
    diagnostic = ""
    fld = None
    for it in range(1, max_iter + 1):
        TP, fld = apply_T_with_field(P, params, grid)
        res = P.sup_distance(TP)
        residuals.append(res)
        in_d.append(bool(TP.in_d))
        if callback is not None:
            callback(it, res)
        if res <= tol:
            rep = validate_in_D(P, params)
            return FixedPointResult(P.flagged(rep["in_D"]), fld, residuals, damping, True, it,
                                    d_report=rep, iterates_in_D=in_d, accelerated_steps=accelerated)
        streak = streak + 1 if len(residuals) > 1 and res > residuals[-2] else 0
        if streak >= DIVERGENCE_STREAK:
            diagnostic = (f"residual increased for {DIVERGENCE_STREAK} consecutive iterations; "
                          f"retry with a smaller damping than {damping}")
            break
        x = _stack(P)
        fx = _stack(TP) - x
        nxt = None
        if anderson:
            hist_x.append(x)
            hist_f.append(fx)
            hist_x, hist_f = hist_x[-(anderson_depth + 1):], hist_f[-(anderson_depth + 1):]
            if len(hist_x) > 1:
                dX = np.diff(np.array(hist_x), axis=0).T
                dF = np.diff(np.array(hist_f), axis=0).T
                gamma, *_ = np.linalg.lstsq(dF, fx, rcond=None)
                cand = _unstack(y, x + damping * fx - (dX + damping * dF) @ gamma)
                if cand is not None:
                    nxt = cand
                    accelerated += 1
                else:
                    hist_x, hist_f = hist_x[-1:], hist_f[-1:]
        P = nxt if nxt is not None else P.mix(TP, damping)
    rep = validate_in_D(P, params)
    if not diagnostic:
        diagnostic = f"no convergence to tol={tol:g} within {max_iter} iterations (last residual {residuals[-1]:.3e})"
    return FixedPointResult(P.flagged(rep["in_D"]), fld, residuals, damping, False, len(residuals),
                            diagnostic=diagnostic, d_report=rep, iterates_in_D=in_d,
                            accelerated_steps=accelerated)


def start_family(params: ModelParams, grid: GridSpec) -> list[Cdf]:
    """Five perturbed starting distribution functions around Phi(./sigma)."""
    y = grid.y
    s = params.sigma
    starts = [Cdf.gaussian(y, k * s) for k in (0.85, 0.95, 1.05, 1.15)]
    starts.append(Cdf.gaussian(y, s, mean=0.25 * s))
    return starts


def solve_multi_start(params: ModelParams, grid: GridSpec, workers: int = 1, **kwargs) -> dict:
    """Run the iteration from each perturbed start and report the spread of the limits."""
    starts = start_family(params, grid)
    results = run_chunks(lambda a, n: solve_fixed_point(params, grid, start=starts[a], **kwargs),
                         len(starts), chunk=1, workers=workers)
    spread = 0.0
    for i in range(len(results)):
        for j in range(i + 1, len(results)):
            spread = max(spread, results[i].P_star.sup_distance(results[j].P_star))
    return {"results": results, "spread": spread,
            "all_converged": all(r.converged for r in results),
            "iterations": [r.iterations for r in results]}


def convergence_rate(residuals) -> float:
    """Geometric-mean contraction factor over the recorded residual history."""
    r = np.asarray(residuals, dtype=float)
    if r.size < 3:
        return math.nan
    return float(np.exp(np.mean(np.diff(np.log(r[1:])))))
