"""Minimal SVG line charts with optional error bars."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf")


def _ticks(lo, hi, count=5):
    if hi <= lo:
        hi = lo + 1.0
    return [lo + (hi - lo) * k / (count - 1) for k in range(count)]


def line_chart(series, *, title="", xlabel="", ylabel="", width=640, height=420) -> str:
    """Render ``series`` as SVG.

    Parameters
    ----------
    series : list of dict
        Each entry has ``label``, ``x``, ``y`` and optionally ``err``.
    """
    left, right, top, bottom = 70, 150, 40, 50
    pts = [(x, y, e) for s in series for x, y, e in zip(s["x"], s["y"], s.get("err") or [0.0] * len(s["x"]))
           if math.isfinite(x) and math.isfinite(y)]
    if not pts:
        raise ValueError("nothing to plot")
    xs = [p[0] for p in pts]
    ylo = min(p[1] - abs(p[2]) for p in pts)
    yhi = max(p[1] + abs(p[2]) for p in pts)
    xlo, xhi = min(xs), max(xs)
    if xhi == xlo:
        xhi = xlo + 1.0
    if yhi == ylo:
        yhi = ylo + 1.0
    pw, ph = width - left - right, height - top - bottom

    def X(x):
        return left + (x - xlo) / (xhi - xlo) * pw

    def Y(y):
        return top + (1.0 - (y - ylo) / (yhi - ylo)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>',
           f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<text x="{left + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>',
           f'<text x="15" y="{top + ph / 2:.1f}" text-anchor="middle" transform="rotate(-90 15 {top + ph / 2:.1f})">{escape(ylabel)}</text>']
    for t in _ticks(xlo, xhi):
        out.append(f'<text x="{X(t):.1f}" y="{top + ph + 16}" text-anchor="middle">{t:.3g}</text>')
    for t in _ticks(ylo, yhi):
        out.append(f'<text x="{left - 6}" y="{Y(t) + 4:.1f}" text-anchor="end">{t:.3g}</text>')
    for k, s in enumerate(series):
        color = _COLORS[k % len(_COLORS)]
        errs = s.get("err") or [0.0] * len(s["x"])
        seg = [(X(x), Y(y)) for x, y in zip(s["x"], s["y"]) if math.isfinite(x) and math.isfinite(y)]
        if seg:
            path = " ".join(f"{a:.1f},{b:.1f}" for a, b in seg)
            out.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        for x, y, e in zip(s["x"], s["y"], errs):
            if e and math.isfinite(y) and math.isfinite(e):
                out.append(f'<line x1="{X(x):.1f}" y1="{Y(y - e):.1f}" x2="{X(x):.1f}" y2="{Y(y + e):.1f}" stroke="{color}" stroke-opacity="0.5"/>')
        ly = top + 16 * (k + 1)
        out.append(f'<line x1="{left + pw + 10}" y1="{ly - 4}" x2="{left + pw + 30}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 35}" y="{ly}">{escape(str(s.get("label", "")))}</text>')
    out.append("</svg>\n")
    return "\n".join(out)
