"""Minimal SVG 1.1 log-log line chart for rate experiments."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

__all__ = ["loglog_svg"]

_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"]
W, H = 640, 440
PAD_L, PAD_R, PAD_T, PAD_B = 70, 170, 30, 50


def _decades(lo: float, hi: float) -> list[int]:
    return list(range(math.floor(lo), math.ceil(hi) + 1))


def loglog_svg(series: dict, reference: tuple | None = None, title: str = "", xlabel: str = "n",
               ylabel: str = "mean test MSE") -> str:
    """Render ``{label: [(x, y), ...]}`` on log axes.

    ``reference = (slope, label)`` adds a dashed line of that slope anchored
    at the first point of the first series.
    """
    pts = [(x, y) for line in series.values() for x, y in line if x > 0 and y > 0 and math.isfinite(y)]
    if not pts:
        raise ValueError("nothing to plot: no positive finite points")
    lx = [math.log10(x) for x, _ in pts]
    ly = [math.log10(y) for _, y in pts]
    x0, x1 = min(lx), max(lx)
    y0, y1 = min(ly), max(ly)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw, ph = W - PAD_L - PAD_R, H - PAD_T - PAD_B

    def sx(v):
        return PAD_L + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return PAD_T + (y1 - v) / (y1 - y0) * ph

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<rect x="{PAD_L}" y="{PAD_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for k in _decades(x0, x1):
        if x0 <= k <= x1:
            out.append(f'<line x1="{sx(k):.2f}" y1="{PAD_T + ph}" x2="{sx(k):.2f}" y2="{PAD_T + ph + 5}" stroke="black"/>')
            out.append(f'<text x="{sx(k):.2f}" y="{PAD_T + ph + 20}" font-size="12" text-anchor="middle">1e{k}</text>')
    for k in _decades(y0, y1):
        if y0 <= k <= y1:
            out.append(f'<line x1="{PAD_L - 5}" y1="{sy(k):.2f}" x2="{PAD_L}" y2="{sy(k):.2f}" stroke="black"/>')
            out.append(f'<text x="{PAD_L - 8}" y="{sy(k) + 4:.2f}" font-size="12" text-anchor="end">1e{k}</text>')
    out.append(f'<text x="{PAD_L + pw / 2}" y="{H - 10}" font-size="13" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{PAD_T + ph / 2}" font-size="13" text-anchor="middle" '
               f'transform="rotate(-90 16 {PAD_T + ph / 2})">{escape(ylabel)}</text>')
    if title:
        out.append(f'<text x="{PAD_L + pw / 2}" y="18" font-size="14" text-anchor="middle">{escape(title)}</text>')

    legend_y = PAD_T + 10
    for i, (label, line) in enumerate(series.items()):
        color = _COLORS[i % len(_COLORS)]
        good = sorted((math.log10(x), math.log10(y)) for x, y in line if x > 0 and y > 0 and math.isfinite(y))
        if good:
            path = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in good)
            out.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="2"/>')
            out.extend(f'<circle cx="{sx(a):.2f}" cy="{sy(b):.2f}" r="3" fill="{color}"/>' for a, b in good)
        out.append(f'<line x1="{W - PAD_R + 10}" y1="{legend_y}" x2="{W - PAD_R + 30}" y2="{legend_y}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{W - PAD_R + 35}" y="{legend_y + 4}" font-size="12">{escape(str(label))}</text>')
        legend_y += 18

    if reference is not None:
        slope, label = reference
        first = next(iter(series.values()))
        anchor = sorted((math.log10(x), math.log10(y)) for x, y in first if x > 0 and y > 0 and math.isfinite(y))
        if anchor:
            ax, ay = anchor[0]
            bx, by = x1, ay + slope * (x1 - ax)
            out.append(f'<line x1="{sx(ax):.2f}" y1="{sy(ay):.2f}" x2="{sx(bx):.2f}" y2="{sy(by):.2f}" '
                       f'stroke="gray" stroke-dasharray="6,4" stroke-width="1.5"/>')
            out.append(f'<line x1="{W - PAD_R + 10}" y1="{legend_y}" x2="{W - PAD_R + 30}" y2="{legend_y}" stroke="gray" stroke-dasharray="6,4"/>')
            out.append(f'<text x="{W - PAD_R + 35}" y="{legend_y + 4}" font-size="12">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
