"""Small self-contained SVG line-chart writer."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def nice_ticks(lo: float, hi: float, target: int = 6) -> list[float]:
    if not (math.isfinite(lo) and math.isfinite(hi)) or hi <= lo:
        return [lo]
    raw = (hi - lo) / max(target - 1, 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step - 1e-9) * step
    ticks = []
    v = start
    while v <= hi + 1e-9 * step:
        ticks.append(0.0 if abs(v) < 1e-12 * step else v)
        v += step
    return ticks


def _fmt(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-3:
        return f"{v:.0e}"
    return f"{v:.4g}"


@dataclass
class Series:
    x: np.ndarray
    y: np.ndarray
    label: str
    dashed: bool = False
    band: tuple | None = None


@dataclass
class LineChart:
    title: str
    xlabel: str
    ylabel: str
    log_y: bool = False
    width: int = 720
    height: int = 460
    series: list = field(default_factory=list)

    def add(self, x, y, label: str, dashed: bool = False, band=None):
        """Add a polyline; ``band=(lower, upper)`` draws a shaded envelope."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if band is not None:
            band = (np.asarray(band[0], dtype=float), np.asarray(band[1], dtype=float))
        self.series.append(Series(x, y, label, dashed, band))
        return self

    def _ranges(self):
        xs = np.concatenate([s.x for s in self.series])
        ys = [s.y for s in self.series]
        for s in self.series:
            if s.band is not None:
                ys.extend(s.band)
        ys = np.concatenate(ys)
        ys = ys[np.isfinite(ys)]
        if self.log_y:
            ys = ys[ys > 0]
            lo, hi = math.floor(math.log10(ys.min())), math.ceil(math.log10(ys.max()))
            if hi == lo:
                hi += 1
            return float(xs.min()), float(xs.max()), float(lo), float(hi)
        lo, hi = float(ys.min()), float(ys.max())
        if hi - lo < 1e-12 * max(1.0, abs(hi)):
            lo, hi = lo - 0.5 * max(abs(lo), 1e-3), hi + 0.5 * max(abs(hi), 1e-3)
        pad = 0.05 * (hi - lo)
        return float(xs.min()), float(xs.max()), lo - pad, hi + pad

    def render(self) -> str:
        if not self.series:
            raise ValueError("chart has no series")
        x0, x1, y0, y1 = self._ranges()
        if x1 <= x0:
            x1 = x0 + 1.0
        left, right, top, bottom = 78, 170, 44, 58
        pw = self.width - left - right
        ph = self.height - top - bottom

        def sx(x):
            return left + (np.asarray(x) - x0) / (x1 - x0) * pw

        def sy(y):
            y = np.asarray(y, dtype=float)
            if self.log_y:
                y = np.log10(np.where(y > 0, y, np.nan))
            return top + (y1 - y) / (y1 - y0) * ph

        out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" height="{self.height}" '
               f'viewBox="0 0 {self.width} {self.height}" font-family="sans-serif" font-size="12">',
               f'<rect width="{self.width}" height="{self.height}" fill="white"/>',
               f'<text x="{left + pw / 2:.1f}" y="24" text-anchor="middle" font-size="15">{escape(self.title)}</text>']
        for t in nice_ticks(x0, x1):
            px = float(sx(t))
            out.append(f'<line x1="{px:.2f}" y1="{top}" x2="{px:.2f}" y2="{top + ph}" stroke="#e5e5e5"/>')
            out.append(f'<text x="{px:.2f}" y="{top + ph + 18}" text-anchor="middle">{_fmt(t)}</text>')
        yticks = [float(k) for k in range(int(y0), int(y1) + 1)] if self.log_y else nice_ticks(y0, y1)
        for t in yticks:
            py = float(top + (y1 - t) / (y1 - y0) * ph)
            label = f"1e{int(t)}" if self.log_y else _fmt(t)
            out.append(f'<line x1="{left}" y1="{py:.2f}" x2="{left + pw}" y2="{py:.2f}" stroke="#e5e5e5"/>')
            out.append(f'<text x="{left - 6}" y="{py + 4:.2f}" text-anchor="end">{label}</text>')
        out.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
        out.append(f'<text x="{left + pw / 2:.1f}" y="{self.height - 16}" text-anchor="middle">{escape(self.xlabel)}</text>')
        out.append(f'<text x="18" y="{top + ph / 2:.1f}" text-anchor="middle" '
                   f'transform="rotate(-90 18 {top + ph / 2:.1f})">{escape(self.ylabel)}</text>')
        for k, s in enumerate(self.series):
            color = PALETTE[k % len(PALETTE)]
            if s.band is not None:
                upper = list(zip(sx(s.x), sy(s.band[1])))
                lower = list(zip(sx(s.x), sy(s.band[0])))[::-1]
                pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in upper + lower if math.isfinite(b))
                out.append(f'<polygon points="{pts}" fill="{color}" fill-opacity="0.18" stroke="none"/>')
            px, py = sx(s.x), sy(s.y)
            pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px, py) if math.isfinite(b))
            dash = ' stroke-dasharray="6,4"' if s.dashed else ""
            out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.6"{dash}/>')
            ly = top + 14 + 18 * k
            lx = left + pw + 12
            out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 22}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/>')
            out.append(f'<text x="{lx + 28}" y="{ly + 4}">{escape(s.label)}</text>')
        out.append("</svg>")
        return "\n".join(out) + "\n"

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.render())
