"""Path simulation of the equilibrium and the statistics built on it.

Two kinds of ensembles are produced on the shared time mesh:

* market-maker view: Euler-Maruyama for dY = sigma dbeta - c Y H_y dt;
* insider view: demand steered to z = H^{-1}(1, V).  Each step freezes the
  lattice correction g = sigma^2 d/dy log k and then integrates the linear
  bridge SDE exactly, so the last step lands on z without dividing by 1 - t.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import ParameterError, RangeError
from .heat import PricingRuleField, _invert_row, invert_terminal
from .interp import hermite_eval
from .model import ModelParams, time_mesh
from .streams import mean_se, path_normals, run_chunks
from .transition import TransitionDensityField

PIN_TOL = 1e-3
STREAM_MM = 3
STREAM_ETA = 4
STREAM_INSIDER = 5
STREAM_PERTURBED = 6
PSI_NODES = 48


def _mesh(fld: PricingRuleField, n_steps):
    return fld.mesh if n_steps is None else time_mesh(int(n_steps), fld.eps_terminal)


def _clip_to_grid(fld, y):
    return np.clip(y, fld.y[0], fld.y[-1])


@dataclass
class MarketMakerEnsemble:
    seed: int
    times: np.ndarray
    Y: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.Y.shape[0]


@dataclass
class SimulationEnsemble:
    """Insider-driven paths together with their signals and noise-trader demand."""

    seed: int
    times: np.ndarray
    eta: np.ndarray
    V: np.ndarray
    z: np.ndarray
    Y: np.ndarray
    X: np.ndarray
    B: np.ndarray
    sigma: float

    @property
    def n_paths(self) -> int:
        return self.Y.shape[0]

    @property
    def Y1(self) -> np.ndarray:
        return self.Y[:, -1]

    def pin_errors(self) -> np.ndarray:
        return np.abs(self.Y1 - self.z)

    def pinned(self, tol: float = PIN_TOL) -> np.ndarray:
        return self.pin_errors() <= tol * self.sigma

    def reconstruction_error(self) -> float:
        """max |Y - X - sigma B| over all paths and times."""
        return float(np.max(np.abs(self.Y - self.X - self.sigma * self.B)))


def _check_paths(n_paths):
    if int(n_paths) != n_paths or n_paths < 1:
        raise ParameterError(f"number of paths must be a positive integer, got {n_paths!r}")


def simulate_mm_paths(fld: PricingRuleField, params: ModelParams, n_paths: int, n_steps=None,
                      seed: int = 0, workers: int = 1, chunk: int = 2000) -> MarketMakerEnsemble:
    """Demand paths in the market-maker filtration, dY = sigma dbeta - c Y H_y(t, Y) dt."""
    _check_paths(n_paths)
    mesh = _mesh(fld, n_steps)
    dts = np.diff(mesh)
    sig, c = params.sigma, params.c

    def run(first, count):
        z = path_normals(seed, STREAM_MM, first, count, dts.size)
        out = np.zeros((count, mesh.size))
        Y = np.zeros(count)
        for j, dt in enumerate(dts):
            Y = Y - c * Y * fld.Hy_at(mesh[j], Y) * dt + sig * math.sqrt(dt) * z[:, j]
            out[:, j + 1] = Y
        return out

    return MarketMakerEnsemble(int(seed), mesh, np.concatenate(run_chunks(run, n_paths, chunk, workers)))


def draw_signals(params: ModelParams, n_paths: int, seed: int):
    """eta i.i.d. standard normal (one stream entry per path) and V = f(eta)."""
    eta = path_normals(seed, STREAM_ETA, 0, n_paths, 1)[:, 0]
    return eta, params.f_spec(eta)


def _bridge_step(Y, z, g, tau, tau_next, n1, n2):
    """Exact step of dY = ((z - Y)/tau + g) dt + sigma dB over [1 - tau, 1 - tau_next].

    Returns the drift-and-pull part of Y_next, the noise-trader increment dB
    and the bridge noise J (to be scaled by sigma), all from two independent
    standard normal vectors.
    """
    dt = tau - tau_next
    if tau_next <= 0.0:
        return z.copy(), math.sqrt(dt) * n1, 0.0
    log_ratio = math.log(tau / tau_next)
    var_j = tau_next * dt / tau
    cov = tau_next * log_ratio
    a = cov / math.sqrt(dt)
    b = math.sqrt(max(var_j - a * a, 0.0))
    dB = math.sqrt(dt) * n1
    J = a * n1 + b * n2
    return z + (tau_next / tau) * (Y - z) + g * cov, dB, J


def simulate_insider_paths(fld: PricingRuleField, tdf: TransitionDensityField, params: ModelParams,
                           n_paths: int, v=None, n_steps=None, seed: int = 0, workers: int = 1,
                           chunk: int = 2000) -> SimulationEnsemble:
    """Insider ensemble; ``v=None`` draws V = f(eta) per path, otherwise all paths use ``v``."""
    _check_paths(n_paths)
    mesh = _mesh(fld, n_steps)
    sig = params.sigma
    if v is None:
        eta, V = draw_signals(params, n_paths, seed)
    else:
        lo, hi = fld.terminal.limits
        if not (lo < v < hi):
            raise RangeError(f"value {v} outside the open range ({lo}, {hi}) of the pricing rule")
        V = np.full(n_paths, float(v))
        eta = np.full(n_paths, float(params.f_spec.inverse(v)))
    z = invert_terminal(fld, V)

    def run(first, count):
        nrm = path_normals(seed, STREAM_INSIDER, first, count, 2 * (mesh.size - 1))
        zz = z[first:first + count]
        Y = np.zeros((count, mesh.size))
        X = np.zeros_like(Y)
        B = np.zeros_like(Y)
        for j in range(mesh.size - 1):
            t, t_next = mesh[j], mesh[j + 1]
            cur = Y[:, j]
            g = tdf.bridge_correction(t, _clip_to_grid(fld, cur), zz)
            nxt, dB, J = _bridge_step(cur, zz, g, 1.0 - t, 1.0 - t_next, nrm[:, 2 * j], nrm[:, 2 * j + 1])
            nxt = nxt + sig * J
            Y[:, j + 1] = nxt
            B[:, j + 1] = B[:, j] + dB
            X[:, j + 1] = X[:, j] + (nxt - cur) - sig * dB
        return Y, X, B

    parts = run_chunks(run, n_paths, chunk, workers)
    Y, X, B = (np.concatenate([p[k] for p in parts]) for k in range(3))
    return SimulationEnsemble(int(seed), mesh, eta, V, z, Y, X, B, sig)


# ------------------------------------------------------------------ wealth and value function

def insider_wealth(times, Y, X, V, fld: PricingRuleField) -> np.ndarray:
    """Left-point sums of (V - H(t, Y_t)) dX_t."""
    Y = np.atleast_2d(Y)
    X = np.atleast_2d(X)
    V = np.broadcast_to(np.asarray(V, dtype=float), Y.shape[:1])
    w = np.zeros(Y.shape[0])
    for j in range(len(times) - 1):
        w += (V - fld.H_at(times[j], Y[:, j])) * (X[:, j + 1] - X[:, j])
    return w


def ensemble_wealth(ens: SimulationEnsemble, fld: PricingRuleField) -> np.ndarray:
    return insider_wealth(ens.times, ens.Y, ens.X, ens.V, fld)


def psi_value(fld: PricingRuleField, params: ModelParams, v, n_nodes: int = PSI_NODES):
    """Psi(0, 0; v) = int_{xi(0)}^0 (H(0, u) - v) du + sigma^2/2 int_0^1 H_y(s, xi(s)) ds.

    The time integral is taken in u = sqrt(1 - s) with Gauss-Legendre nodes,
    which removes the (1 - s)^{-1/2} behaviour of H_y near s = 1.
    """
    v = np.asarray(v, dtype=float)
    lo, hi = fld.terminal.limits
    if np.any(v <= lo) or np.any(v >= hi):
        raise RangeError("value outside the open range of the pricing rule")
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    u = 0.5 * (x + 1.0)
    wu = 0.5 * w
    y0, dy = fld.y[0], fld.dy
    time_part = np.zeros(v.shape)
    for uk, wk in zip(u, wu):
        s = 1.0 - uk * uk
        H, Hy, Hyy = fld.row(s)
        xi = _invert_row(fld.y, H, Hy, fld.terminal, v)
        _check_xi(fld, xi)
        time_part += wk * 2.0 * uk * hermite_eval(y0, dy, Hy, Hyy, xi)
    H0, Hy0, _ = fld.row(0.0)
    xi0 = _invert_row(fld.y, H0, Hy0, fld.terminal, v)
    _check_xi(fld, xi0)
    space_part = _integral_h_minus_v(fld, 0.0, xi0, np.zeros(v.shape), v, n_nodes)
    return space_part + 0.5 * params.sigma ** 2 * time_part


def _check_xi(fld, xi):
    if np.any(xi < fld.y[0]) or np.any(xi > fld.y[-1]):
        raise RangeError("level curve leaves the y-grid")


def _integral_h_minus_v(fld, t, a, b, v, n_nodes=32):
    """int_a^b (H(t, u) - v) du, vectorized over the endpoint arrays."""
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    pts = mid[..., None] + half[..., None] * x
    vals = fld.H_at(t, pts) - v[..., None]
    return half * np.sum(w * vals, axis=-1)


def psi_terminal(fld: PricingRuleField, V, Y1, z=None):
    """Psi(1, Y_1) = int_{xi(1)}^{Y_1} (h(u) - V) du >= 0."""
    V = np.asarray(V, dtype=float)
    z = invert_terminal(fld, V) if z is None else np.asarray(z, dtype=float)
    return _integral_h_minus_v(fld, 1.0, z, np.asarray(Y1, dtype=float), V)


# ------------------------------------------------------------------ market-maker account

@dataclass
class MarketMakerAccount:
    times: np.ndarray
    G: np.ndarray
    rho: float

    @property
    def U(self) -> np.ndarray:
        return -np.exp(-self.rho * self.G)


def mm_utility_process(times, Y, V, fld: PricingRuleField, params: ModelParams, tamper: float = 1.0):
    """Market-maker gains G_t and the martingale test of U(G_t) = -exp(-rho G_t).

    ``tamper`` multiplies the pricing rule used for the account (a value other
    than 1 is a deliberately wrong rule, used as a negative control).
    """
    priced = fld if tamper == 1.0 else fld.scaled(tamper)
    Y = np.atleast_2d(Y)
    n = params.n_mm
    G = np.zeros(Y.shape)
    for j in range(len(times) - 1):
        G[:, j + 1] = G[:, j] - Y[:, j] * priced.Hy_at(times[j], Y[:, j]) * (Y[:, j + 1] - Y[:, j]) / n
    Y1 = Y[:, -1]
    G[:, -1] += Y1 / n * (priced.H_at(1.0, Y1) - np.asarray(V, dtype=float))
    acc = MarketMakerAccount(np.asarray(times), G, params.rho)
    mean, se = mean_se(acc.U, axis=0)
    dev = np.abs(mean + 1.0)
    zscore = np.divide(dev, se, out=np.zeros_like(dev), where=se > 0)
    worst = int(np.argmax(zscore))
    report = {
        "max_abs_dev": float(dev.max()),
        "worst_z": float(zscore[worst]),
        "worst_t": float(times[worst]),
        "pass": bool(np.all(dev <= 3.0 * se + 1e-15)),
        "mean": mean,
        "se": se,
        "tamper": tamper,
    }
    return acc, report


def bsde_volatility(fld: PricingRuleField, params: ModelParams, t: float, y):
    """Z_t = sigma H_y(t, Y_t)."""
    return params.sigma * fld.Hy_at(t, y)


# ------------------------------------------------------------------ perturbed strategies

PERTURBATIONS = ("kappa", "early_stop", "extra_drift")


def simulate_perturbed(fld: PricingRuleField, tdf: TransitionDensityField, params: ModelParams,
                       kind: str, value: float, n_paths: int, n_steps=None, seed: int = 0,
                       workers: int = 1, chunk: int = 2000) -> dict:
    """Euler-Maruyama paths of a modified insider strategy.

    kappa: trading rate -c Y H_y + kappa sigma^2 d/dy log p;
    early_stop: the optimal rate until ``value``, no trading afterwards;
    extra_drift: the optimal rate plus a constant.
    """
    if kind not in PERTURBATIONS:
        raise ParameterError(f"unknown perturbation {kind!r}; expected one of {PERTURBATIONS}")
    _check_paths(n_paths)
    mesh = _mesh(fld, n_steps)
    sig, c = params.sigma, params.c
    eta, V = draw_signals(params, n_paths, seed)
    z = invert_terminal(fld, V)

    def rate(t, Y, zz):
        Yc = _clip_to_grid(fld, Y)
        mm = -c * Y * fld.Hy_at(t, Yc)
        info = sig ** 2 * tdf.score(t, Yc, zz)
        if kind == "kappa":
            return mm + value * info
        if kind == "early_stop":
            return mm + info if t < value else np.zeros_like(Y)
        return mm + info + value

    def run(first, count):
        nrm = path_normals(seed, STREAM_PERTURBED, first, count, mesh.size - 1)
        zz = z[first:first + count]
        vv = V[first:first + count]
        Y = np.zeros(count)
        W = np.zeros(count)
        for j in range(mesh.size - 1):
            t, dt = mesh[j], mesh[j + 1] - mesh[j]
            dX = rate(t, Y, zz) * dt
            W += (vv - fld.H_at(t, Y)) * dX
            Y = Y + dX + sig * math.sqrt(dt) * nrm[:, j]
        return Y, W

    parts = run_chunks(run, n_paths, chunk, workers)
    Y1 = np.concatenate([p[0] for p in parts])
    W1 = np.concatenate([p[1] for p in parts])
    return {"kind": kind, "value": value, "eta": eta, "V": V, "z": z, "Y1": Y1, "W1": W1}


def suboptimality_probe(fld: PricingRuleField, tdf: TransitionDensityField, params: ModelParams,
                        kind: str, value: float, n_paths: int, seed: int = 0, n_steps=None,
                        workers: int = 1, psi0=None) -> dict:
    """Wealth deficit of a perturbed strategy against Psi(0, 0; V).

    The deficit should equal the mean of Psi(1, Y_1) >= 0 (up to 3 standard
    errors); that mean is reported as the margin.
    """
    sim = simulate_perturbed(fld, tdf, params, kind, value, n_paths, n_steps, seed, workers)
    psi0 = psi_value(fld, params, sim["V"]) if psi0 is None else psi0
    psi1 = psi_terminal(fld, sim["V"], sim["Y1"], sim["z"])
    deficit = psi0 - sim["W1"]
    gap = deficit - psi1
    m_def, se_def = mean_se(deficit)
    m_margin, se_margin = mean_se(psi1)
    m_gap, se_gap = mean_se(gap)
    return {
        "kind": kind, "value": value,
        "deficit": float(m_def), "deficit_se": float(se_def),
        "margin": float(m_margin), "margin_se": float(se_margin),
        "gap": float(m_gap), "gap_se": float(se_gap),
        "consistent": bool(abs(m_gap) <= 3.0 * se_gap),
        "strictly_positive": bool(m_margin > 3.0 * se_margin),
    }


def noise_integral(ens: SimulationEnsemble, fld: PricingRuleField) -> np.ndarray:
    """Left-point sums of (H(t, Y_t) - V) sigma dB_t."""
    out = np.zeros(ens.n_paths)
    for j in range(ens.times.size - 1):
        out += (fld.H_at(ens.times[j], ens.Y[:, j]) - ens.V) * ens.sigma * (ens.B[:, j + 1] - ens.B[:, j])
    return out


def optimality_report(ens: SimulationEnsemble, fld: PricingRuleField, params: ModelParams,
                      wealth=None, psi0=None) -> dict:
    """Mean insider wealth against mean Psi(0, 0; V), paired over paths.

    Also reports the RMS residual of the pathwise identity
    W_1 = Psi(0, 0) - Psi(1, Y_1) + int (H - V) sigma dB, which shrinks with the mesh.
    """
    wealth = ensemble_wealth(ens, fld) if wealth is None else wealth
    psi0 = psi_value(fld, params, ens.V) if psi0 is None else psi0
    diff = wealth - psi0
    m, se = mean_se(diff)
    mw, sew = mean_se(wealth)
    resid = wealth - psi0 + psi_terminal(fld, ens.V, ens.Y1, ens.z) - noise_integral(ens, fld)
    return {"mean_wealth": float(mw), "wealth_se": float(sew), "mean_psi0": float(np.mean(psi0)),
            "diff": float(m), "diff_se": float(se), "pass": bool(abs(m) <= 3.0 * se),
            "identity_rms": float(np.sqrt(np.mean(resid ** 2))), "identity_mean": float(np.mean(resid))}


# ------------------------------------------------------------------ stylized facts

def terminal_premise(fld: PricingRuleField, tol: float = 1e-9) -> bool:
    """h odd and concave on y >= 0 (checked on the grid)."""
    term = fld.terminal
    h = term.h
    odd = np.max(np.abs(h + h[::-1])) <= tol * max(1.0, np.max(np.abs(h)))
    half = term.y >= 0
    concave = bool(np.all(np.diff(term.dh[half]) <= tol))
    return bool(odd and concave)


def depth_diagnostics(times, Y, fld: PricingRuleField, params: ModelParams, n_check: int = 21) -> dict:
    """Mean H_y(t, Y_t) curve with SE bands, its monotonicity and a mean-reversion statistic."""
    times = np.asarray(times)
    Y = np.atleast_2d(Y)
    picks = np.unique(np.searchsorted(times, np.linspace(0.0, times[-2], n_check)))
    depth = np.array([fld.Hy_at(times[j], Y[:, j]) for j in picks]).T
    mean, se = mean_se(depth, axis=0)
    steps = np.diff(depth, axis=1)
    step_mean, step_se = mean_se(steps, axis=0)
    nondecreasing = bool(np.all(step_mean >= -3.0 * step_se))
    interior = picks[(times[picks] > 0.0)]
    revert = []
    for j in interior:
        drift = -params.c * Y[:, j] * fld.Hy_at(times[j], Y[:, j])
        revert.append(float(np.mean(np.sign(Y[:, j]) * drift)))
    revert = np.array(revert)
    change = mean[-1] - mean[0]
    change_se = float(np.std(depth[:, -1] - depth[:, 0], ddof=1) / math.sqrt(depth.shape[0]))
    return {
        "times": times[picks], "mean_depth_inverse": mean, "se": se,
        "premise": terminal_premise(fld),
        "nondecreasing": nondecreasing,
        "worst_step_z": float(np.min(step_mean / np.where(step_se > 0, step_se, 1.0))),
        "total_change": float(change), "total_change_se": change_se,
        "mean_reversion": revert, "reverting": bool(revert.size and np.all(revert < 0.0)),
    }


# ------------------------------------------------------------------ distribution checks

def ks_distance(samples, cdf) -> float:
    """One-sample Kolmogorov-Smirnov statistic against a callable distribution function."""
    return float(stats.kstest(np.asarray(samples, dtype=float), cdf).statistic)


def ks_two_sample(a, b) -> float:
    return float(stats.ks_2samp(np.asarray(a), np.asarray(b)).statistic)


def bridge_report(ens: SimulationEnsemble, fld: PricingRuleField, params: ModelParams) -> dict:
    """Law of H(1, Y_1) against the law of f(eta), and terminal pinning."""
    prices = fld.H_at(1.0, ens.Y1)
    ks = ks_distance(prices, params.f_spec.signal_cdf)
    frac = float(np.mean(ens.pinned()))
    return {"ks": ks, "ks_pass": ks < 0.02, "pinned_fraction": frac, "pin_pass": frac >= 0.999,
            "max_pin_error": float(ens.pin_errors().max()),
            "reconstruction_error": ens.reconstruction_error(),
            "pass": ks < 0.02 and frac >= 0.999}
