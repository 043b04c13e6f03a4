"""Distribution functions on a uniform grid, stored with their survival tail."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.interpolate import PchipInterpolator
from scipy.special import ndtr

from .errors import InputError
from .interp import hermite_eval
from .model import gauss_density


@dataclass(frozen=True)
class Cdf:
    """Absolutely continuous distribution function sampled on a uniform grid.

    ``P`` is the distribution function, ``Q = 1 - P`` is kept separately
    (accumulated from the right) so that far-upper-tail quantiles stay accurate,
    and ``dens`` is the derivative ``P'``.
    """

    y: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    dens: np.ndarray
    in_d: bool = False

    @property
    def dy(self) -> float:
        return float(self.y[1] - self.y[0])

    @classmethod
    def from_density(cls, y, dens) -> "Cdf":
        y = np.asarray(y, dtype=float)
        dens = np.asarray(dens, dtype=float)
        dy = y[1] - y[0]
        P = cumulative_simpson(dens, dx=dy, initial=0.0)
        Q = cumulative_simpson(dens[::-1], dx=dy, initial=0.0)[::-1]
        mass = P[-1]
        if not mass > 0:
            raise InputError("density has no mass on the grid")
        P = np.maximum(P / mass, 0.0)
        Q = np.maximum(Q / Q[0], 0.0)
        P = np.maximum.accumulate(P)
        Q = np.minimum.accumulate(Q)
        return cls(y, P, Q, dens / mass)

    @classmethod
    def gaussian(cls, y, sd: float, mean: float = 0.0) -> "Cdf":
        y = np.asarray(y, dtype=float)
        u = (y - mean) / sd
        return cls(y, ndtr(u), ndtr(-u), gauss_density(sd * sd, y - mean))

    def mix(self, other: "Cdf", theta: float) -> "Cdf":
        """Convex combination (1 - theta) * self + theta * other."""
        a = 1.0 - theta
        return Cdf(self.y, a * self.P + theta * other.P, a * self.Q + theta * other.Q,
                   a * self.dens + theta * other.dens)

    def flagged(self, in_d: bool) -> "Cdf":
        return replace(self, in_d=bool(in_d))

    def sup_distance(self, other: "Cdf") -> float:
        return float(np.max(np.abs(self.P - other.P)))

    def at(self, x):
        """Distribution function at arbitrary points (cubic Hermite, clamped to [0, 1])."""
        x = np.asarray(x, dtype=float)
        val = hermite_eval(self.y[0], self.dy, self.P, self.dens, x, extrapolate="constant")
        return np.clip(val, 0.0, 1.0)

    def resample(self, y_new) -> "Cdf":
        y_new = np.asarray(y_new, dtype=float)
        dens = np.maximum(PchipInterpolator(self.y, self.dens, extrapolate=False)(y_new), 0.0)
        dens = np.nan_to_num(dens, nan=0.0)
        return Cdf.from_density(y_new, dens)

    def mean_var(self) -> tuple[float, float]:
        dy = self.dy
        w = np.full(self.y.size, dy)
        w[0] = w[-1] = 0.5 * dy
        m = float(np.sum(w * self.dens * self.y))
        v = float(np.sum(w * self.dens * (self.y - m) ** 2))
        return m, v

    def check(self, tol: float = 1e-6) -> list[str]:
        """Return a list of violated invariants (empty when valid)."""
        problems = []
        if np.any(np.diff(self.P) < -1e-14):
            problems.append("P is not nondecreasing")
        if self.P[0] > 1e-9:
            problems.append(f"P(y_min) = {self.P[0]:.3e} exceeds 1e-9")
        if self.Q[-1] > 1e-9:
            problems.append(f"1 - P(y_max) = {self.Q[-1]:.3e} exceeds 1e-9")
        if np.any(self.dens < 0):
            problems.append("negative density value")
        integrated = self.P[0] + cumulative_simpson(self.dens, dx=self.dy, initial=0.0)
        err = float(np.max(np.abs(integrated - self.P)))
        if err > tol:
            problems.append(f"P differs from the integral of P' by {err:.3e}")
        return problems
