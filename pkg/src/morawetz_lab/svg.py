"""Minimal standalone SVG line plots (polylines, axes, ticks, legend).

Output depends only on the input numbers, formatted with fixed precision,
so repeated rendering of the same data is byte-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 720, 480
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 80, 200, 40, 60
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf", "#7f7f7f", "#bcbd22")


@dataclass(frozen=True)
class Series:
    label: str
    x: tuple
    y: tuple


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _tick_label(v: float, log: bool) -> str:
    return f"{10.0**v:.3g}" if log else f"{v:.4g}"


def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    step = (hi - lo) / (count - 1)
    return [lo + i * step for i in range(count)]


def _transform(vals, log: bool):
    out = []
    for v in vals:
        if log:
            out.append(math.log10(v) if v > 0 and math.isfinite(v) else None)
        else:
            out.append(v if math.isfinite(v) else None)
    return out


def line_plot(path, title: str, series, xlabel: str, ylabel: str, logx=False, logy=False) -> Path:
    """Write one SVG; points that are nonpositive on a log axis are skipped."""
    prepared = []
    for s in series:
        xs, ys = _transform(s.x, logx), _transform(s.y, logy)
        pts = [(a, b) for a, b in zip(xs, ys) if a is not None and b is not None]
        prepared.append((s.label, pts))
    allx = [p[0] for _, pts in prepared for p in pts]
    ally = [p[1] for _, pts in prepared for p in pts]
    x0, x1 = (min(allx), max(allx)) if allx else (0.0, 1.0)
    y0, y1 = (min(ally), max(ally)) if ally else (0.0, 1.0)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw = WIDTH - MARGIN_L - MARGIN_R
    ph = HEIGHT - MARGIN_T - MARGIN_B

    def px(x):
        return MARGIN_L + (x - x0) / (x1 - x0) * pw

    def py(y):
        return MARGIN_T + ph - (y - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{WIDTH / 2:.0f}" y="22" text-anchor="middle" font-family="sans-serif" font-size="15">{escape(title)}</text>',
        f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for tx in _ticks(x0, x1):
        X = _fmt(px(tx))
        out.append(f'<line x1="{X}" y1="{MARGIN_T + ph}" x2="{X}" y2="{MARGIN_T + ph + 5}" stroke="black"/>')
        out.append(
            f'<text x="{X}" y="{MARGIN_T + ph + 20}" text-anchor="middle" font-family="sans-serif" font-size="11">'
            f"{escape(_tick_label(tx, logx))}</text>"
        )
    for ty in _ticks(y0, y1):
        Y = _fmt(py(ty))
        out.append(f'<line x1="{MARGIN_L - 5}" y1="{Y}" x2="{MARGIN_L}" y2="{Y}" stroke="black"/>')
        out.append(
            f'<text x="{MARGIN_L - 8}" y="{Y}" text-anchor="end" dominant-baseline="middle" font-family="sans-serif" '
            f'font-size="11">{escape(_tick_label(ty, logy))}</text>'
        )
    out.append(
        f'<text x="{MARGIN_L + pw / 2:.0f}" y="{HEIGHT - 15}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="12">{escape(xlabel)}</text>'
    )
    out.append(
        f'<text x="18" y="{MARGIN_T + ph / 2:.0f}" text-anchor="middle" font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 18 {MARGIN_T + ph / 2:.0f})">{escape(ylabel)}</text>'
    )
    for i, (label, pts) in enumerate(prepared):
        colour = PALETTE[i % len(PALETTE)]
        if pts:
            coords = " ".join(f"{_fmt(px(a))},{_fmt(py(b))}" for a, b in pts)
            out.append(f'<polyline points="{coords}" fill="none" stroke="{colour}" stroke-width="1.5"/>')
        ly = MARGIN_T + 14 * i + 8
        lx = WIDTH - MARGIN_R + 12
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 18}" y2="{ly}" stroke="{colour}" stroke-width="2"/>')
        out.append(
            f'<text x="{lx + 24}" y="{ly}" dominant-baseline="middle" font-family="sans-serif" font-size="10">'
            f"{escape(label)}</text>"
        )
    out.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(out) + "\n")
    return path
