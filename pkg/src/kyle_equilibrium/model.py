"""Model primitives: the value map, economic parameters, grids and Gaussian helpers."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.special import ndtr, ndtri

from .errors import ExtrapolationError, ParameterError

SQRT_2PI = math.sqrt(2.0 * math.pi)
VALUE_MAP_KINDS = ("scaled_tanh", "scaled_normal_cdf", "tabulated")


# ---------------------------------------------------------------- Gaussian kernel

def gauss_density(var, x):
    """Centered normal density with variance ``var`` evaluated at ``x``."""
    var = np.asarray(var, dtype=float)
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x / var) / np.sqrt(2.0 * np.pi * var)


def std_normal_cdf(x):
    return ndtr(x)


def std_normal_quantile(p):
    return ndtri(p)


def std_normal_pdf(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x) / SQRT_2PI


def bachelier_call(scale: float, strike):
    """E[(scale * Z - strike)^+] for a standard normal Z."""
    strike = np.asarray(strike, dtype=float)
    if scale <= 0.0:
        return np.maximum(-strike, 0.0)
    u = strike / scale
    return scale * std_normal_pdf(u) - strike * ndtr(-u)


# ---------------------------------------------------------------- value map

@dataclass(frozen=True)
class ValueMap:
    """Bounded, strictly increasing map from the normal signal to the asset value.

    ``scaled_tanh`` is ``a*tanh(b*x) + m``, ``scaled_normal_cdf`` is
    ``a*(2*Phi(x) - 1) + m`` and ``tabulated`` is a monotone cubic (PCHIP)
    through strictly increasing data given as ``{"x": [...], "y": [...]}``.
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in VALUE_MAP_KINDS:
            raise ParameterError(f"unknown value map kind {self.kind!r}; expected one of {VALUE_MAP_KINDS}")
        p = dict(self.params)
        if self.kind == "tabulated":
            xs = np.asarray(p.get("x", ()), dtype=float)
            ys = np.asarray(p.get("y", ()), dtype=float)
            if xs.ndim != 1 or xs.size < 3 or xs.shape != ys.shape:
                raise ParameterError("tabulated value map needs matching x and y arrays with at least 3 points")
            if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
                raise ParameterError("tabulated value map: f must be bounded (finite table values)")
            if np.any(np.diff(xs) <= 0):
                raise ParameterError("tabulated value map: x nodes must be strictly increasing")
            if np.any(np.diff(ys) <= 0):
                raise ParameterError("tabulated value map: f must be strictly increasing")
            interp = PchipInterpolator(xs, ys, extrapolate=False)
            object.__setattr__(self, "_interp", interp)
            object.__setattr__(self, "_slope", interp.derivative())
        else:
            a = float(p.setdefault("a", 1.0))
            b = float(p.setdefault("b", 1.0))
            m = float(p.setdefault("m", 0.0))
            if not all(math.isfinite(v) for v in (a, b, m)):
                raise ParameterError("value map coefficients must be finite (f must be bounded)")
            if a <= 0.0 or b <= 0.0:
                raise ParameterError("value map must be strictly increasing: need a > 0 and b > 0")
            if self.kind == "scaled_normal_cdf" and b != 1.0:
                raise ParameterError("scaled_normal_cdf takes no b coefficient")
        object.__setattr__(self, "params", p)

    @classmethod
    def tanh(cls, a=1.0, b=1.0, m=0.0) -> "ValueMap":
        return cls("scaled_tanh", {"a": a, "b": b, "m": m})

    @classmethod
    def normal_cdf(cls, a=1.0, m=0.0) -> "ValueMap":
        return cls("scaled_normal_cdf", {"a": a, "m": m})

    @classmethod
    def table(cls, x, y) -> "ValueMap":
        return cls("tabulated", {"x": list(map(float, x)), "y": list(map(float, y))})

    @property
    def f_inf(self) -> float:
        p = self.params
        if self.kind == "tabulated":
            return float(np.max(np.abs(p["y"])))
        return abs(p["a"]) + abs(p["m"])

    @property
    def limits(self) -> tuple[float, float]:
        """Values of f at minus and plus infinity (table ends for tabulated)."""
        p = self.params
        if self.kind == "tabulated":
            return float(p["y"][0]), float(p["y"][-1])
        return p["m"] - p["a"], p["m"] + p["a"]

    def _check_support(self, x):
        lo, hi = self.params["x"][0], self.params["x"][-1]
        if np.any(x < lo) or np.any(x > hi):
            raise ExtrapolationError(f"tabulated value map queried outside its support [{lo}, {hi}]")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        p = self.params
        if self.kind == "scaled_tanh":
            return p["a"] * np.tanh(p["b"] * x) + p["m"]
        if self.kind == "scaled_normal_cdf":
            # 2*Phi(x) - 1 written via erf-free ndtr of both signs keeps both tails accurate
            return p["a"] * (ndtr(x) - ndtr(-x)) + p["m"]
        self._check_support(x)
        return self._interp(x)

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        p = self.params
        if self.kind == "scaled_tanh":
            return p["a"] * p["b"] / np.cosh(p["b"] * x) ** 2
        if self.kind == "scaled_normal_cdf":
            return 2.0 * p["a"] * std_normal_pdf(x)
        self._check_support(x)
        return self._slope(x)

    def inverse(self, v):
        """Solve f(x) = v; values outside the open range map to -inf / +inf."""
        v = np.asarray(v, dtype=float)
        p = self.params
        if self.kind == "scaled_tanh":
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.arctanh(np.clip((v - p["m"]) / p["a"], -1.0, 1.0)) / p["b"]
        if self.kind == "scaled_normal_cdf":
            return ndtri(np.clip(0.5 * ((v - p["m"]) / p["a"] + 1.0), 0.0, 1.0))
        xs = np.asarray(p["x"])
        ys = np.asarray(p["y"])
        lo = np.full(v.shape, xs[0])
        hi = np.full(v.shape, xs[-1])
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            below = self._interp(mid) < v
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        out = 0.5 * (lo + hi)
        out = np.where(v <= ys[0], -np.inf, out)
        return np.where(v >= ys[-1], np.inf, out)

    def signal_cdf(self, v):
        """P(f(eta) <= v) for a standard normal eta."""
        return ndtr(self.inverse(v))

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params}


# ---------------------------------------------------------------- parameters

@dataclass(frozen=True)
class ModelParams:
    sigma: float
    rho: float
    n_mm: int
    f_spec: ValueMap
    c: float
    big_c: float
    c_star: float

    @property
    def f_inf(self) -> float:
        return self.f_spec.f_inf

    def with_value_map(self, f_spec: ValueMap) -> "ModelParams":
        return build_params(self.sigma, self.rho, self.n_mm, f_spec)


def build_params(sigma, rho, n_mm, f_spec: ValueMap) -> ModelParams:
    if not (isinstance(sigma, (int, float)) and math.isfinite(sigma) and sigma > 0):
        raise ParameterError(f"noise volatility sigma must be > 0, got {sigma!r}")
    if not (isinstance(rho, (int, float)) and math.isfinite(rho) and rho > 0):
        raise ParameterError(f"risk aversion rho must be > 0, got {rho!r}")
    if int(n_mm) != n_mm or n_mm < 2:
        raise ParameterError(f"number of market makers n_mm must be an integer >= 2, got {n_mm!r}")
    if not isinstance(f_spec, ValueMap):
        raise ParameterError("f_spec must be a ValueMap (bounded, strictly increasing, C1)")
    sigma, rho, n_mm = float(sigma), float(rho), int(n_mm)
    f_inf = f_spec.f_inf
    c = sigma * sigma * rho / (2.0 * n_mm)
    big_c = f_inf * math.sqrt(2.0 / (sigma * sigma * math.pi))
    c_star = math.exp((rho * f_inf / n_mm) * math.sqrt(2.0 / math.pi) * sigma)
    alt = math.exp(2.0 * c * big_c)
    if abs(c_star - alt) > 1e-12 * c_star:
        raise ParameterError("density-dominance constant formulas disagree")
    return ModelParams(sigma, rho, n_mm, f_spec, c, big_c, c_star)


# ---------------------------------------------------------------- grids

@dataclass(frozen=True)
class GridSpec:
    y_max: float
    n_y: int = 801
    n_t: int = 400
    eps_terminal: float = 2.5e-3

    def __post_init__(self):
        if not (self.y_max > 0 and math.isfinite(self.y_max)):
            raise ParameterError("grid half-width y_max must be positive")
        if self.n_y < 5 or self.n_y % 2 == 0:
            raise ParameterError("n_y must be odd (so that y = 0 is a node) and at least 5")
        if self.n_t < 4:
            raise ParameterError("n_t must be at least 4")
        if not (0.0 < self.eps_terminal < min(1.0, 1e3 / self.n_t)):
            raise ParameterError("eps_terminal must lie in (0, min(1, 1000/n_t))")

    @classmethod
    def default(cls, sigma: float = 1.0) -> "GridSpec":
        return cls(y_max=8.0 * sigma)

    @property
    def y(self) -> np.ndarray:
        return np.linspace(-self.y_max, self.y_max, self.n_y)

    @property
    def dy(self) -> float:
        return 2.0 * self.y_max / (self.n_y - 1)

    def refined(self, factor: int = 2) -> "GridSpec":
        """Grid with ``factor`` times the spatial and temporal resolution."""
        return replace(self, n_y=factor * (self.n_y - 1) + 1, n_t=factor * self.n_t)

    def times(self) -> np.ndarray:
        return time_mesh(self.n_t, self.eps_terminal)


def time_mesh(n_t: int, eps_terminal: float, refine_fraction: float = 0.05,
              ratio: float = 0.85, min_step_divisor: float = 8.0) -> np.ndarray:
    """Uniform mesh on [0, 1 - refine_fraction], geometric refinement towards t = 1.

    Step sizes shrink by ``ratio`` per step when walking towards 1, from the
    base step ``1/n_t`` down to ``1/(n_t * min_step_divisor)``.  The node
    ``1 - eps_terminal`` is always present.
    """
    dt = 1.0 / n_t
    n_uniform = int(math.floor((1.0 - refine_fraction) * n_t + 1e-9))
    t_a = n_uniform * dt
    span = 1.0 - t_a
    steps = []
    acc = 0.0
    h = dt / min_step_divisor
    while acc < span - 1e-14:
        s = min(h, dt, span - acc)
        if span - acc - s < 0.5 * s:
            s = span - acc
        steps.append(s)
        acc += s
        h /= ratio
    tail = 1.0 - np.cumsum(steps)[::-1]
    nodes = np.concatenate([np.arange(n_uniform) * dt, tail, [1.0]])
    nodes[0] = 0.0
    nodes = np.unique(np.round(nodes, 15))
    stand_off = 1.0 - eps_terminal
    if np.min(np.abs(nodes - stand_off)) > 1e-12:
        nodes = np.sort(np.append(nodes, stand_off))
    else:
        nodes[np.argmin(np.abs(nodes - stand_off))] = stand_off
    return nodes


def default_workers() -> int:
    """Worker count from ``KYLE_EQ_WORKERS`` (defaults to 1)."""
    raw = os.environ.get("KYLE_EQ_WORKERS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1
