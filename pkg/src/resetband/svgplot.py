"""Minimal SVG line and grouped-bar charts with no plotting dependency."""

from __future__ import annotations

import math
from html import escape
from typing import Mapping, Sequence

import numpy as np

W, H = 720, 420
ML, MR, MT, MB = 80, 160, 40, 56
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf")
MAX_POINTS = 4000


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if not math.isfinite(lo) or not math.isfinite(hi) or hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    return [start + i * step for i in range(int((hi - start) / step) + 1)]


def _fmt(v: float) -> str:
    return f"{v:.3g}"


class _Frame:
    def __init__(self, x_lo, x_hi, y_lo, y_hi, logx=False, logy=False):
        self.logx, self.logy = logx, logy
        self.x_lo, self.x_hi = self._t(x_lo, logx), self._t(x_hi, logx)
        self.y_lo, self.y_hi = self._t(y_lo, logy), self._t(y_hi, logy)
        if self.x_hi == self.x_lo:
            self.x_hi = self.x_lo + 1
        if self.y_hi == self.y_lo:
            self.y_lo, self.y_hi = self.y_lo - 1, self.y_hi + 1

    @staticmethod
    def _t(v, log):
        return math.log10(v) if log else v

    def px(self, x):
        return ML + (self._t(x, self.logx) - self.x_lo) / (self.x_hi - self.x_lo) * (W - ML - MR)

    def py(self, y):
        return H - MB - (self._t(y, self.logy) - self.y_lo) / (self.y_hi - self.y_lo) * (H - MT - MB)


def _axes(fr: _Frame, title, xlabel, ylabel, xticks: bool = True) -> list[str]:
    out = [f'<rect x="{ML}" y="{MT}" width="{W - ML - MR}" height="{H - MT - MB}" '
           'fill="none" stroke="#444"/>']
    xt = [10 ** e for e in range(math.ceil(fr.x_lo), math.floor(fr.x_hi) + 1)] if fr.logx \
        else _ticks(fr.x_lo, fr.x_hi)
    if not xticks:
        xt = []
    yt = [10 ** e for e in range(math.ceil(fr.y_lo), math.floor(fr.y_hi) + 1)] if fr.logy \
        else _ticks(fr.y_lo, fr.y_hi)
    for v in xt:
        x = fr.px(v)
        out.append(f'<line x1="{x:.1f}" y1="{MT}" x2="{x:.1f}" y2="{H - MB}" stroke="#ddd"/>')
        out.append(f'<text x="{x:.1f}" y="{H - MB + 16}" font-size="11" '
                   f'text-anchor="middle">{_fmt(v)}</text>')
    for v in yt:
        y = fr.py(v)
        out.append(f'<line x1="{ML}" y1="{y:.1f}" x2="{W - MR}" y2="{y:.1f}" stroke="#ddd"/>')
        out.append(f'<text x="{ML - 6}" y="{y + 4:.1f}" font-size="11" '
                   f'text-anchor="end">{_fmt(v)}</text>')
    out.append(f'<text x="{(W - MR + ML) / 2}" y="{MT - 14}" font-size="14" '
               f'text-anchor="middle">{escape(title)}</text>')
    out.append(f'<text x="{(W - MR + ML) / 2}" y="{H - 14}" font-size="12" '
               f'text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="18" y="{(H - MB + MT) / 2}" font-size="12" text-anchor="middle" '
               f'transform="rotate(-90 18 {(H - MB + MT) / 2})">{escape(ylabel)}</text>')
    return out


def _legend(names: Sequence[str]) -> list[str]:
    out = []
    for i, name in enumerate(names):
        y = MT + 14 + 18 * i
        c = COLORS[i % len(COLORS)]
        out.append(f'<rect x="{W - MR + 12}" y="{y - 9}" width="12" height="10" fill="{c}"/>')
        out.append(f'<text x="{W - MR + 30}" y="{y}" font-size="11">{escape(name)}</text>')
    return out


def _wrap(body: list[str]) -> str:
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
            f'viewBox="0 0 {W} {H}">\n<rect width="100%" height="100%" fill="white"/>\n'
            + "\n".join(body) + "\n</svg>\n")


def line_plot(x, series: Mapping[str, Sequence[float]], title: str = "", xlabel: str = "",
              ylabel: str = "", logx: bool = False, logy: bool = False) -> str:
    """Polyline chart; long series are decimated to at most 4000 points."""
    x = np.asarray(x, dtype=float)
    step = max(1, len(x) // MAX_POINTS)
    xs = x[::step]
    ys = {k: np.asarray(v, dtype=float)[::step] for k, v in series.items()}
    finite = np.concatenate([v[np.isfinite(v)] for v in ys.values()] or [np.zeros(1)])
    if logy:
        finite = finite[finite > 0]
    y_lo, y_hi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    fr = _Frame(float(xs.min()), float(xs.max()), y_lo, y_hi, logx, logy)
    body = _axes(fr, title, xlabel, ylabel)
    for i, (name, v) in enumerate(ys.items()):
        pts = " ".join(f"{fr.px(a):.2f},{fr.py(b):.2f}" for a, b in zip(xs, v)
                       if math.isfinite(b) and (not logy or b > 0))
        body.append(f'<polyline fill="none" stroke="{COLORS[i % len(COLORS)]}" '
                    f'stroke-width="1.2" points="{pts}"/>')
    body += _legend(list(ys))
    return _wrap(body)


def bar_groups(categories: Sequence[str], groups: Mapping[str, Sequence[float]],
               title: str = "", xlabel: str = "", ylabel: str = "") -> str:
    """Grouped bars, one group per category and one colour per series."""
    vals = np.array([list(v) for v in groups.values()], dtype=float)
    finite = vals[np.isfinite(vals)]
    y_hi = float(finite.max()) if finite.size else 1.0
    n_cat, n_ser = len(categories), len(groups)
    fr = _Frame(0, max(n_cat, 1), 0.0, y_hi * 1.05 if y_hi > 0 else 1.0)
    body = _axes(fr, title, xlabel, ylabel, xticks=False)
    slot = (W - ML - MR) / max(n_cat, 1)
    bw = slot * 0.8 / max(n_ser, 1)
    for j, cat in enumerate(categories):
        x0 = ML + j * slot + slot * 0.1
        for i in range(n_ser):
            v = vals[i, j]
            if not math.isfinite(v):
                continue
            y = fr.py(v)
            body.append(f'<rect x="{x0 + i * bw:.2f}" y="{y:.2f}" width="{bw:.2f}" '
                        f'height="{H - MB - y:.2f}" fill="{COLORS[i % len(COLORS)]}"/>')
        body.append(f'<text x="{ML + (j + 0.5) * slot:.1f}" y="{H - MB + 28}" font-size="10" '
                    f'text-anchor="middle">{escape(str(cat))}</text>')
    body += _legend(list(groups))
    return _wrap(body)
