"""Law of the demand process in the market-maker filtration.

The density of ``dY = sigma dB - c Y H_y(t, Y) dt`` is propagated by a
finite-volume Fokker-Planck scheme with exponentially fitted fluxes and
Crank-Nicolson time stepping (implicit-Euler start).  A Monte-Carlo oracle with
a direct Euler estimator and a Girsanov-reweighted Brownian estimator provides
an independent check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .cdf import Cdf
from .errors import DiscretizationError, StabilityError
from .fitted import forward_operator, tri_matvec, tri_solve
from .heat import PricingRuleField
from .model import GridSpec, ModelParams, bachelier_call, gauss_density, time_mesh
from .streams import path_normals, run_chunks

NEGATIVE_TOL = 1e-10
MASS_TOL = 1e-5
TAIL_PROBES = (0.25, 0.5, 1.0, 2.0)
EARLY_STEP_FRACTION = 0.1
MIN_START_CELLS = 4.0


@dataclass
class DensityEvolution:
    times: np.ndarray
    y: np.ndarray
    phi: np.ndarray
    mass_log: np.ndarray

    @property
    def terminal(self) -> np.ndarray:
        return self.phi[-1]


def face_slopes(fld: PricingRuleField, t: float) -> np.ndarray:
    """H_y at cell faces from the cubic Hermite midpoint rule."""
    _, Hy, Hyy = fld.row(t)
    return 0.5 * (Hy[:-1] + Hy[1:]) + fld.dy / 8.0 * (Hyy[:-1] - Hyy[1:])


def _fp_operator(fld, params, t, y_faces):
    drift = -params.c * y_faces * face_slopes(fld, t)
    y_out = np.array([fld.y[0] - 0.5 * fld.dy, fld.y[-1] + 0.5 * fld.dy])
    outer = -params.c * y_out * fld.Hy_at(t, y_out)
    return forward_operator(drift, 0.5 * params.sigma ** 2, fld.dy, outer_drift=outer)


def evolve_density(fld: PricingRuleField, params: ModelParams, grid: GridSpec | None = None,
                   t_start: float = 0.0, y_start: float = 0.0, t_end: float = 1.0,
                   store: bool = True) -> DensityEvolution:
    """Density of Y on the mesh nodes in (t_start, t_end], started from a point mass at y_start.

    The point mass is replaced by the exact one-step diffusion q(sigma^2 dt_1, . - y_start)
    at the first node after ``t_start``.
    """
    mesh = fld.mesh if grid is None else grid.times()
    # the starting Gaussian must span a few cells, so skip nodes too close to t_start
    first = t_start + MIN_START_CELLS * (fld.dy / params.sigma) ** 2
    nodes = mesh[(mesh > max(first, t_start + 1e-13)) & (mesh < t_end - 1e-13)]
    nodes = np.concatenate([[t_start], nodes, [t_end]])
    y = fld.y
    dy = fld.dy
    y_faces = 0.5 * (y[:-1] + y[1:])
    dt1 = nodes[1] - nodes[0]
    # first interval from the point mass: drift linearized at the start point (Gaussian, second order)
    _, hy0, hyy0 = (float(v[0]) for v in fld.eval(t_start, np.array([y_start])))
    a0 = -params.c * y_start * hy0
    a1 = -params.c * (hy0 + y_start * hyy0)
    shift = a0 * dt1 * (1.0 + 0.5 * a1 * dt1)
    phi = gauss_density(params.sigma ** 2 * dt1 * (1.0 + a1 * dt1), y - y_start - shift)
    phi /= phi.sum() * dy
    out = [phi] if store else None
    masses = [1.0]
    op_prev = _fp_operator(fld, params, nodes[1], y_faces)
    for k in range(1, nodes.size - 1):
        t0, t1 = nodes[k], nodes[k + 1]
        # early on the density is narrow: cap steps at a fraction of elapsed time
        n_sub = max(1, int(math.ceil((t1 - t0) / (EARLY_STEP_FRACTION * (t0 - t_start)))))
        sub = np.linspace(t0, t1, n_sub + 1)
        for a, b in zip(sub[:-1], sub[1:]):
            dt = b - a
            if k == 1 and a == t0:
                # implicit-Euler half steps damp the start-up transient
                for ta in (0.5 * (a + b), b):
                    op = _fp_operator(fld, params, ta, y_faces)
                    phi = tri_solve(-0.5 * dt * op[0], 1.0 - 0.5 * dt * op[1], -0.5 * dt * op[2], phi)
            else:
                op = _fp_operator(fld, params, b, y_faces)
                rhs = phi + 0.5 * dt * tri_matvec(*op_prev, phi)
                phi = tri_solve(-0.5 * dt * op[0], 1.0 - 0.5 * dt * op[1], -0.5 * dt * op[2], rhs)
            op_prev = op
        low = phi.min()
        if low < -NEGATIVE_TOL:
            raise StabilityError(f"negative density {low:.3e} at t={t1:.6f}; increase n_t")
        phi = np.maximum(phi, 0.0)
        mass = phi.sum() * dy
        if abs(mass - 1.0) > MASS_TOL:
            raise StabilityError(f"mass drift {mass - 1.0:.3e} at t={t1:.6f}; increase n_t")
        phi /= mass
        masses.append(mass)
        if store:
            out.append(phi)
    phis = np.array(out) if store else phi[None, :]
    times = nodes[1:] if store else nodes[-1:]
    return DensityEvolution(times, y, phis, np.array(masses))


def law_Y1(fld: PricingRuleField, params: ModelParams, grid: GridSpec | None = None,
           validate: bool = True) -> Cdf:
    """Distribution function of Y_1; flagged as a member of D when all checks pass."""
    evo = evolve_density(fld, params, grid, store=False)
    P = Cdf.from_density(fld.y, evo.terminal)
    if validate:
        return P.flagged(validate_in_D(P, params)["in_D"])
    return P


# ------------------------------------------------------------------ bound checks

def _spline_pair(P: Cdf):
    return (CubicHermiteSpline(P.y, P.P, P.dens), CubicHermiteSpline(P.y, P.Q, -P.dens))


def tail_bounds_check(P: Cdf, params: ModelParams, probes=TAIL_PROBES, atol: float = 1e-8) -> dict:
    """Call-price lower bounds E[(Y-x)^+] >= E[(e^{-2cC} B_{sigma^2} - x)^+] and the mirror.

    Both sides are computed by quadrature; ``atol`` absorbs quadrature error in
    the degenerate case where the bound is attained.
    """
    lower_spline, upper_spline = _spline_pair(P)
    scale = math.exp(-2.0 * params.c * params.big_c) * params.sigma
    report = {"scale": scale, "upper": {}, "lower": {}, "pass": True}
    for frac in probes:
        x = frac * params.sigma
        bound = float(bachelier_call(scale, x))
        up = float(upper_spline.integrate(x, P.y[-1])) if x < P.y[-1] else 0.0
        lo = float(lower_spline.integrate(P.y[0], -x)) if -x > P.y[0] else 0.0
        report["upper"][frac] = {"x": x, "lhs": up, "rhs": bound, "margin": up - bound}
        report["lower"][frac] = {"x": x, "lhs": lo, "rhs": bound, "margin": lo - bound}
        if up - bound < -atol or lo - bound < -atol:
            report["pass"] = False
    report["upper_pass"] = all(v["margin"] >= -atol for v in report["upper"].values())
    report["lower_pass"] = all(v["margin"] >= -atol for v in report["lower"].values())
    return report


def validate_in_D(P: Cdf, params: ModelParams, rel_tol: float = 1e-6) -> dict:
    """Dominance P' <= C* q(sigma^2, .) and the two tail bounds, with worst-case margins."""
    cap = params.c_star * gauss_density(params.sigma ** 2, P.y)
    excess = P.dens - cap * (1.0 + rel_tol)
    worst = int(np.argmax(excess / cap))
    tails = tail_bounds_check(P, params)
    dominance = bool(np.all(excess <= 0.0))
    upper_margin = min(v["margin"] for v in tails["upper"].values())
    lower_margin = min(v["margin"] for v in tails["lower"].values())
    report = {
        "dominance": dominance,
        "dominance_worst_ratio": float(P.dens[worst] / cap[worst]),
        "dominance_worst_y": float(P.y[worst]),
        "upper_tail": tails["upper_pass"],
        "upper_tail_margin": upper_margin,
        "lower_tail": tails["lower_pass"],
        "lower_tail_margin": lower_margin,
    }
    report["in_D"] = dominance and tails["upper_pass"] and tails["lower_pass"]
    if not report["in_D"]:
        failed = [k for k in ("dominance", "upper_tail", "lower_tail") if not report[k]]
        report["violation"] = f"{', '.join(failed)} (worst dominance node y={report['dominance_worst_y']:.4g})"
    return report


# ------------------------------------------------------------------ Monte-Carlo oracle

def weighted_ecdf(samples, weights, x):
    order = np.argsort(samples, kind="stable")
    s = samples[order]
    cw = np.concatenate([[0.0], np.cumsum(weights[order])])
    return cw[np.searchsorted(s, x, side="right")] / cw[-1]


@dataclass
class LawOracleResult:
    direct: np.ndarray
    weighted_points: np.ndarray
    weights: np.ndarray
    probes: np.ndarray = field(default=None)
    direct_cdf: np.ndarray = field(default=None)
    weighted_cdf: np.ndarray = field(default=None)
    combined_se: np.ndarray = field(default=None)
    agree: bool = False
    ks_between: float = float("nan")

    def direct_cdf_at(self, x):
        s = np.sort(self.direct)
        return np.searchsorted(s, x, side="right") / s.size

    def weighted_cdf_at(self, x):
        return weighted_ecdf(self.weighted_points, self.weights, x)


def mc_law_oracle(fld: PricingRuleField, params: ModelParams, n_paths: int, n_steps: int | None = None,
                  seed: int = 0, workers: int = 1, chunk: int = 5000) -> LawOracleResult:
    """Terminal law of Y by Euler paths and by Girsanov-reweighted Brownian paths."""
    if n_paths < 1000:
        raise ValueError("mc_law_oracle needs at least 1000 paths")
    mesh = fld.mesh if n_steps is None else time_mesh(n_steps, fld.eps_terminal)
    dts = np.diff(mesh)
    sig = params.sigma
    c = params.c
    bound = math.exp(2.0 * c * params.big_c) if fld.terminal.bounded else math.inf

    def direct_chunk(first, count):
        z = path_normals(seed, 0, first, count, dts.size)
        Y = np.zeros(count)
        for j, dt in enumerate(dts):
            Y = Y - c * Y * fld.Hy_at(mesh[j], Y) * dt + sig * math.sqrt(dt) * z[:, j]
        return Y

    def weighted_chunk(first, count):
        z = path_normals(seed, 1, first, count, dts.size)
        W = np.zeros(count)
        log_m = np.zeros(count)
        for j, dt in enumerate(dts):
            dW = math.sqrt(dt) * z[:, j]
            theta = -c * W * fld.Hy_at(mesh[j], sig * W)
            log_m += theta * dW - 0.5 * theta * theta * dt
            W = W + dW
        return sig * W, np.exp(log_m)

    direct = np.concatenate(run_chunks(direct_chunk, n_paths, chunk, workers))
    parts = run_chunks(weighted_chunk, n_paths, chunk, workers)
    pts = np.concatenate([p[0] for p in parts])
    wts = np.concatenate([p[1] for p in parts])
    if np.any(wts > bound * (1.0 + 1e-9)):
        raise DiscretizationError(f"Girsanov weight {wts.max():.6g} exceeds exp(2cC) = {bound:.6g}; refine the time mesh")
    res = LawOracleResult(direct, pts, wts)
    probes = np.quantile(direct, (np.arange(50) + 0.5) / 50)
    fd = res.direct_cdf_at(probes)
    fw = res.weighted_cdf_at(probes)
    n = direct.size
    mbar = wts.mean()
    ind = pts[None, :] <= probes[:, None]
    var_w = np.var(wts[None, :] * (ind - fw[:, None]), axis=1) / (mbar * mbar) / n
    se = np.sqrt(fd * (1 - fd) / n + var_w)
    res.probes, res.direct_cdf, res.weighted_cdf, res.combined_se = probes, fd, fw, se
    res.agree = bool(np.all(np.abs(fd - fw) <= 3.0 * se))
    grid = np.sort(np.concatenate([direct, pts]))
    res.ks_between = float(np.max(np.abs(res.direct_cdf_at(grid) - res.weighted_cdf_at(grid))))
    return res
