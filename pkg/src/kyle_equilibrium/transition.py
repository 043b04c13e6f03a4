"""Transition density of the demand process towards terminal points z.

With tau = 1 - t the density is written as

    p(t, y; 1, z) = q(sigma^2 tau, z - y) * exp(B(1, z) - B(t, y)) * k(t, y; z),

where B(t, y) = -(c / sigma^2) int_0^y x H_y(t, x) dx.  The factor k is the
Brownian-bridge expectation of exp(int W) with potential

    W = c (H_y(t, y) - H_y(t, 0) / 2 - c y^2 H_y(t, y)^2 / (2 sigma^2)),

so it solves k_t + sigma^2/2 k_yy + (z - y)/tau k_y + W k = 0 with k(1, .) = 1.
That terminal value is exact, so the lattice starts at t = 1 and no stand-off
or blending is needed.  k stays smooth in y and z, which keeps cubic
interpolation on a coarse z lattice accurate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson

from .errors import ExtrapolationError, ParameterError, ResolutionError, StabilityError
from .fitted import backward_operator, tri_matvec, tri_solve
from .forward import evolve_density
from .heat import PricingRuleField
from .interp import hermite_eval, lagrange4_weights
from .model import GridSpec, ModelParams, gauss_density
from .streams import path_normals, run_chunks

# intervals ending this close to t = 1 are stepped with implicit Euler
IMPLICIT_ZONE = 0.05
DEFAULT_N_Z = 101
DEFAULT_Z_SPAN = 6.0
CK_TOL = 1e-3


def potential_row(fld: PricingRuleField, params: ModelParams, t: float) -> np.ndarray:
    """W(t, .) on the y-grid."""
    _, Hy, Hyy = fld.row(t)
    y = fld.y
    c = params.c
    hy0 = float(hermite_eval(y[0], fld.dy, Hy, Hyy, 0.0))
    return c * (Hy - 0.5 * hy0 - c / (2.0 * params.sigma ** 2) * (y * Hy) ** 2)


def b_row(fld: PricingRuleField, params: ModelParams, t: float) -> np.ndarray:
    """B(t, .) on the y-grid, by cumulative Simpson quadrature anchored at y = 0."""
    _, Hy, _ = fld.row(t)
    y = fld.y
    cum = cumulative_simpson(y * Hy, dx=fld.dy, initial=0.0)
    return -(params.c / params.sigma ** 2) * (cum - np.interp(0.0, y, cum))


@dataclass
class TransitionDensityField:
    """Lattice of log k and its y-slope over (mesh time, z, y).

    ``log_k`` and ``dlog_k`` have shape ``(n_t, n_z, n_y)`` and are stored in
    single precision; everything else is reconstructed from the pricing field.
    """

    fld: PricingRuleField
    params: ModelParams
    times: np.ndarray
    z: np.ndarray
    log_k: np.ndarray
    dlog_k: np.ndarray
    stand_off: float = 0.0
    _b_cache: dict = field(default_factory=dict, repr=False)

    @property
    def y(self) -> np.ndarray:
        return self.fld.y

    @property
    def dz(self) -> float:
        return float(self.z[1] - self.z[0])

    def b_at(self, t: float, y):
        key = float(t)
        row = self._b_cache.get(key)
        if row is None:
            row = b_row(self.fld, self.params, key)
            self._b_cache[key] = row
        _, Hy, _ = self.fld.row(t)
        slope = -(self.params.c / self.params.sigma ** 2) * self.y * Hy
        return hermite_eval(self.y[0], self.fld.dy, row, slope, y)

    def _check(self, t, y, z):
        if not (0.0 <= t < 1.0):
            raise ExtrapolationError(f"time {t} outside [0, 1)")
        y = np.asarray(y, dtype=float)
        z = np.asarray(z, dtype=float)
        if np.any(z < self.z[0] - 1e-12) or np.any(z > self.z[-1] + 1e-12):
            raise ExtrapolationError(f"terminal point outside the lattice range [{self.z[0]:.4g}, {self.z[-1]:.4g}]")
        ys = self.y
        if np.any(y < ys[0]) or np.any(y > ys[-1]):
            raise ExtrapolationError(f"y outside the grid range [{ys[0]:.4g}, {ys[-1]:.4g}]")
        return y, z

    def _time_weights(self, t):
        j = int(np.searchsorted(self.times, t, side="right")) - 1
        j = min(max(j, 0), self.times.size - 2)
        w = (t - self.times[j]) / (self.times[j + 1] - self.times[j])
        return j, w

    def _gather(self, arr, t, y, z):
        """Interpolate a lattice array: linear in t and y, cubic Lagrange in z."""
        y, z = np.broadcast_arrays(np.asarray(y, dtype=float), np.asarray(z, dtype=float))
        j, wt = self._time_weights(t)
        zi, zw = lagrange4_weights(self.z[0], self.dz, self.z.size, z)
        ys = self.y
        s = (y - ys[0]) / self.fld.dy
        i = np.clip(np.floor(s).astype(np.int64), 0, ys.size - 2)
        u = s - i
        out = np.zeros(y.shape)
        for tj, tw in ((j, 1.0 - wt), (j + 1, wt)):
            if tw == 0.0:
                continue
            slab = arr[tj]
            for a in range(4):
                za = zi[..., a]
                val = (1.0 - u) * slab[za, i] + u * slab[za, i + 1]
                out += tw * zw[..., a] * val
        return out

    def log_k_at(self, t, y, z):
        y, z = self._check(t, y, z)
        return self._gather(self.log_k, t, y, z)

    def dlog_k_at(self, t, y, z):
        y, z = self._check(t, y, z)
        return self._gather(self.dlog_k, t, y, z)

    def log_r(self, t, y, z):
        """log of p / q(sigma^2 (1 - t), z - y)."""
        y, z = self._check(t, y, z)
        return self._gather(self.log_k, t, y, z) + self.b_at(1.0, z) - self.b_at(t, y)

    def r(self, t, y, z):
        return np.exp(self.log_r(t, y, z))

    def p(self, t, y, z):
        tau = 1.0 - t
        y, z = self._check(t, y, z)
        return gauss_density(self.params.sigma ** 2 * tau, z - y) * np.exp(self.log_r(t, y, z))

    def bridge_correction(self, t, y, z):
        """sigma^2 d/dy log k: the insider drift beyond the Brownian bridge pull (z - y)/tau."""
        return self.params.sigma ** 2 * self.dlog_k_at(t, y, z)

    def score(self, t, y, z):
        """d/dy log p(t, y; 1, z)."""
        y, z = self._check(t, y, z)
        s2 = self.params.sigma ** 2
        hy = self.fld.Hy_at(t, y)
        return (z - y) / (s2 * (1.0 - t)) + self._gather(self.dlog_k, t, y, z) + self.params.c / s2 * y * hy

    def r_bound(self, y):
        """Upper bound e^{2cC} e^{c ||h|| |y| / sigma^2} for r."""
        prm = self.params
        return math.exp(2.0 * prm.c * prm.big_c) * np.exp(prm.c * self.fld.h_inf / prm.sigma ** 2 * np.abs(y))


def default_z_grid(params: ModelParams, n_z: int = DEFAULT_N_Z, span: float = DEFAULT_Z_SPAN) -> np.ndarray:
    return np.linspace(-span * params.sigma, span * params.sigma, n_z)


def backward_density_family(fld: PricingRuleField, params: ModelParams, grid: GridSpec | None = None,
                            z_grid=None, stand_off: float = 0.0) -> TransitionDensityField:
    """Solve for k(t, y; z) on every mesh time, all terminal points at once.

    ``stand_off > 0`` starts instead at t = 1 - stand_off with k = 1, which
    drops the potential on the last stretch; it exists to measure that error.
    """
    mesh = fld.mesh if grid is None else grid.times()
    z = default_z_grid(params) if z_grid is None else np.asarray(z_grid, dtype=float)
    y = fld.y
    if z.size < 4 or np.any(np.diff(z) <= 0):
        raise ParameterError("z_grid must be increasing with at least 4 points")
    if not np.allclose(np.diff(z), z[1] - z[0], rtol=1e-9, atol=0.0):
        raise ParameterError("z_grid must be uniform")
    if z[0] <= y[0] or z[-1] >= y[-1]:
        raise ParameterError("z_grid must lie strictly inside the y-grid")
    if stand_off:
        mesh = np.append(mesh[mesh < 1.0 - stand_off - 1e-12], [1.0 - stand_off, 1.0])
    dy = fld.dy
    sig2 = params.sigma ** 2
    diffusion = 0.5 * sig2
    y_faces = 0.5 * (y[:-1] + y[1:])
    pull = z[:, None] - y_faces[None, :]

    def generator(t):
        lo, main, up = backward_operator(pull / (1.0 - t), diffusion, dy)
        return lo, main + potential_row(fld, params, t)[None, :], up

    n_t = mesh.size
    log_k = np.zeros((n_t, z.size, y.size), dtype=np.float32)
    dlog_k = np.zeros_like(log_k)
    k = np.ones((z.size, y.size))
    start = n_t - 2
    if stand_off:
        start = n_t - 3
    op_next = None
    for j in range(start, -1, -1):
        t0, t1 = mesh[j], mesh[j + 1]
        dt = t1 - t0
        op = generator(t0)
        if 1.0 - t1 < IMPLICIT_ZONE or op_next is None:
            rhs = k
            a = 1.0
        else:
            rhs = k + 0.5 * dt * tri_matvec(*op_next, k)
            a = 0.5
        k = tri_solve(-a * dt * op[0], 1.0 - a * dt * op[1], -a * dt * op[2], rhs)
        low = float(k.min())
        if not low > 0.0:
            raise StabilityError(f"non-positive transition factor {low:.3e} at t={t0:.6f}; increase n_t")
        op_next = op if 1.0 - t0 >= IMPLICIT_ZONE else None
        lk = np.log(k)
        log_k[j] = lk
        dlog_k[j] = np.gradient(lk, dy, axis=1, edge_order=2)
    if stand_off:
        # between the stand-off node and t = 1 keep k = 1 (log_k = 0)
        log_k[n_t - 2] = 0.0
    return TransitionDensityField(fld, params, mesh, z, log_k, dlog_k, stand_off=float(stand_off))


def score_eval(tdf: TransitionDensityField, t, y, z):
    """d/dy log p(t, y; 1, z) from the lattice."""
    return tdf.score(t, y, z)


# ------------------------------------------------------------------ oracles and probes

def bridge_mc_r(fld: PricingRuleField, params: ModelParams, t: float, y: float, z: float,
                n_paths: int, seed: int = 0, workers: int = 1, chunk: int = 5000,
                times=None) -> tuple[float, float]:
    """Feynman-Kac estimate of r(t, y; 1, z) over Brownian bridges from (t, y) to (1, z).

    The time integral of W along each bridge uses the trapezoid rule on the
    field's mesh (restricted to [t, 1]).  Returns (mean, standard error).
    """
    if not (0.0 <= t < 1.0):
        raise ParameterError("bridge start time must lie in [0, 1)")
    if n_paths < 1000:
        raise ParameterError("bridge_mc_r needs at least 1000 paths")
    mesh = fld.mesh if times is None else np.asarray(times, dtype=float)
    nodes = np.concatenate([[t], mesh[(mesh > t + 1e-13) & (mesh < 1.0)], [1.0]])
    sig = params.sigma
    w_rows = [potential_row(fld, params, s) for s in nodes]
    w_end = float(np.interp(z, fld.y, w_rows[-1]))

    def run(first, count):
        eps = path_normals(seed, 2, first, count, nodes.size - 2)
        cur = np.full(count, float(y))
        acc = 0.5 * (nodes[1] - nodes[0]) * np.interp(cur, fld.y, w_rows[0])
        for j in range(1, nodes.size - 1):
            s_prev, s = nodes[j - 1], nodes[j]
            rem = 1.0 - s_prev
            frac = (s - s_prev) / rem
            cur = cur + frac * (z - cur) + sig * math.sqrt((s - s_prev) * (1.0 - s) / rem) * eps[:, j - 1]
            wv = np.interp(cur, fld.y, w_rows[j])
            acc += 0.5 * (nodes[j + 1] - nodes[j - 1]) * wv
        acc += 0.5 * (nodes[-1] - nodes[-2]) * w_end
        return np.exp(acc)

    vals = np.concatenate(run_chunks(run, n_paths, chunk, workers))
    factor = math.exp(float(_b_point(fld, params, 1.0, z) - _b_point(fld, params, t, y)))
    return float(factor * vals.mean()), float(factor * vals.std(ddof=1) / math.sqrt(vals.size))


def _b_point(fld, params, t, x):
    return float(np.interp(x, fld.y, b_row(fld, params, t)))


def chapman_kolmogorov_probe(tdf: TransitionDensityField, t: float, y: float, s: float, z: float) -> dict:
    """Compare int p(t, y; s, x) p(s, x; 1, z) dx with p(t, y; 1, z).

    The inner density p(t, y; s, .) is propagated by the forward solver; ``s``
    is snapped to the nearest lattice time.
    """
    s = float(tdf.times[np.argmin(np.abs(tdf.times - s))])
    if not (t < s < 1.0):
        raise ParameterError("need t < s < 1 for a Chapman-Kolmogorov probe")
    evo = evolve_density(tdf.fld, tdf.params, t_start=t, y_start=y, t_end=s, store=False)
    xs = tdf.y
    inner = evo.terminal
    outer = tdf.p(s, xs, np.full(xs.size, z))
    lhs = float(np.trapezoid(inner * outer, xs))
    rhs = float(tdf.p(t, y, z))
    return {"t": t, "y": y, "s": s, "z": z, "composed": lhs, "direct": rhs,
            "abs_err": abs(lhs - rhs), "rel_err": abs(lhs - rhs) / rhs}


def random_probes(params: ModelParams, n: int, seed: int, t_max: float = 0.9, spread: float = 2.0):
    """Random (t, y, z) triples in the bulk of the lattice."""
    rng = np.random.default_rng(seed)
    t = rng.uniform(0.0, t_max, n)
    y = rng.uniform(-spread, spread, n) * params.sigma
    z = rng.uniform(-spread, spread, n) * params.sigma
    return list(zip(t.tolist(), y.tolist(), z.tolist()))


def density_report(tdf: TransitionDensityField, n_probes: int = 30, seed: int = 7,
                   ck_tol: float = CK_TOL, raise_on_failure: bool = False) -> dict:
    """Positivity, z-normalization, r bound and Chapman-Kolmogorov probes.

    The Chapman-Kolmogorov gate is on the absolute density difference; the
    worst relative difference is reported alongside.
    """
    prm = tdf.params
    rep = {"positive": bool(np.all(np.isfinite(tdf.log_k)))}
    zf = np.linspace(tdf.z[0], tdf.z[-1], 2401)
    norm_err = 0.0
    bound_ok = True
    for t, y, _ in random_probes(prm, 10, seed, spread=1.5):
        mass = float(np.trapezoid(tdf.p(t, y, zf), zf))
        norm_err = max(norm_err, abs(mass - 1.0))
        r = tdf.r(t, y, zf)
        bound_ok &= bool(np.all(r <= tdf.r_bound(y) * (1.0 + 1e-6)))
    rep["normalization_err"] = norm_err
    rep["r_bound"] = bound_ok
    ck = []
    for t, y, z in random_probes(prm, n_probes, seed + 1, t_max=0.6):
        s = t + 0.5 * (1.0 - t) * 0.8
        ck.append(chapman_kolmogorov_probe(tdf, t, y, s, z))
    worst = max(p["abs_err"] for p in ck)
    rep["ck_worst"] = worst
    rep["ck_worst_rel"] = max(p["rel_err"] for p in ck)
    rep["ck_probes"] = ck
    rep["ck_pass"] = worst <= ck_tol
    if raise_on_failure and worst > 10 * ck_tol:
        raise ResolutionError(f"Chapman-Kolmogorov probe error {worst:.3e} exceeds {10 * ck_tol:g}")
    rep["pass"] = rep["positive"] and norm_err <= 1e-4 and bound_ok and rep["ck_pass"]
    return rep
