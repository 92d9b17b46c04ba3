"""Minimal dependency-free SVG line charts with deterministic output."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")

WIDTH, PANEL_HEIGHT = 640, 360
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 170, 40, 50


@dataclass(frozen=True)
class Series:
    label: str
    x: Sequence[float]
    y: Sequence[float]
    dashed: bool = False
    markers: bool = False
    color: str | None = None


@dataclass(frozen=True)
class Panel:
    title: str
    xlabel: str
    ylabel: str
    series: Sequence[Series]


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    ticks, v = [], start
    while v <= hi + 1e-9 * step:
        ticks.append(round(v, 12))
        v += step
    return ticks


def _bounds(values: list[float]) -> tuple[float, float]:
    finite = [v for v in values if math.isfinite(v)]
    if not finite:
        return 0.0, 1.0
    lo, hi = min(finite), max(finite)
    if hi == lo:
        pad = abs(lo) * 0.05 or 0.5
        return lo - pad, hi + pad
    pad = (hi - lo) * 0.05
    return lo - pad, hi + pad


def _panel(panel: Panel, top: float) -> list[str]:
    xs = [float(v) for s in panel.series for v in s.x]
    ys = [float(v) for s in panel.series for v in s.y]
    x0, x1 = _bounds(xs)
    y0, y1 = _bounds(ys)
    pw = WIDTH - MARGIN_L - MARGIN_R
    ph = PANEL_HEIGHT - MARGIN_T - MARGIN_B

    def px(x):
        return MARGIN_L + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + MARGIN_T + (1 - (y - y0) / (y1 - y0)) * ph

    out = [f'<g class="panel" data-title="{escape(panel.title)}">',
           f'<text x="{WIDTH / 2:.1f}" y="{top + 24:.1f}" text-anchor="middle" font-size="15">'
           f'{escape(panel.title)}</text>',
           f'<rect x="{MARGIN_L}" y="{top + MARGIN_T:.1f}" width="{pw}" height="{ph}" '
           f'fill="none" stroke="#333"/>']
    for t in _ticks(x0, x1):
        out.append(f'<text x="{_fmt(px(t))}" y="{top + MARGIN_T + ph + 16:.1f}" text-anchor="middle" '
                   f'font-size="11">{t:g}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<line x1="{MARGIN_L}" x2="{MARGIN_L + pw}" y1="{_fmt(py(t))}" y2="{_fmt(py(t))}" '
                   f'stroke="#ddd"/>')
        out.append(f'<text x="{MARGIN_L - 6}" y="{_fmt(py(t) + 4)}" text-anchor="end" font-size="11">{t:g}</text>')
    out.append(f'<text x="{MARGIN_L + pw / 2:.1f}" y="{top + PANEL_HEIGHT - 10:.1f}" text-anchor="middle" '
               f'font-size="12">{escape(panel.xlabel)}</text>')
    out.append(f'<text transform="translate(18 {top + MARGIN_T + ph / 2:.1f}) rotate(-90)" '
               f'text-anchor="middle" font-size="12">{escape(panel.ylabel)}</text>')
    for i, s in enumerate(panel.series):
        color = s.color or PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{_fmt(px(float(x)))},{_fmt(py(float(y)))}"
                       for x, y in zip(s.x, s.y) if math.isfinite(float(y)))
        dash = ' stroke-dasharray="6 4"' if s.dashed else ""
        out.append(f'<polyline class="series" data-label="{escape(s.label)}" points="{pts}" fill="none" '
                   f'stroke="{color}" stroke-width="2"{dash}/>')
        if s.markers:
            for x, y in zip(s.x, s.y):
                if math.isfinite(float(y)):
                    out.append(f'<circle cx="{_fmt(px(float(x)))}" cy="{_fmt(py(float(y)))}" r="3" '
                               f'fill="none" stroke="{color}"/>')
        ly = top + MARGIN_T + 14 + 18 * i
        lx = MARGIN_L + pw + 12
        out.append(f'<line x1="{lx}" x2="{lx + 24}" y1="{ly:.1f}" y2="{ly:.1f}" stroke="{color}" '
                   f'stroke-width="2"{dash}/>')
        out.append(f'<text x="{lx + 30}" y="{ly + 4:.1f}" font-size="11">{escape(s.label)}</text>')
    out.append("</g>")
    return out


def render(panels: Sequence[Panel]) -> str:
    """Stack ``panels`` vertically in one SVG document."""
    height = PANEL_HEIGHT * len(panels)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" '
             f'viewBox="0 0 {WIDTH} {height}">',
             f'<rect width="{WIDTH}" height="{height}" fill="white"/>']
    for i, panel in enumerate(panels):
        parts.extend(_panel(panel, i * PANEL_HEIGHT))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
