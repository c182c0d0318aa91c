"""Minimal static SVG line plots (no plotting dependency)."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

COLORS = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"]
W, H = 640, 220
ML, MR, MT, MB = 60, 140, 24, 30


def _fmt(v):
    return f"{v:.3g}"


def panel(series, title, y0):
    """SVG fragment for one panel. ``series`` holds (label, t, y, dashed)."""
    ys = np.concatenate([np.asarray(y, float) for _, _, y, _ in series]) if series else np.zeros(1)
    ys = ys[np.isfinite(ys)]
    lo, hi = (float(ys.min()), float(ys.max())) if ys.size else (0.0, 1.0)
    if hi - lo < 1e-300:
        lo, hi = lo - 1.0, hi + 1.0
    ts = np.concatenate([np.asarray(t, float) for _, t, _, _ in series]) if series else np.zeros(1)
    t0, t1 = float(ts.min()), float(ts.max())
    if t1 <= t0:
        t1 = t0 + 1.0
    pw, ph = W - ML - MR, H - MT - MB

    def sx(t):
        return ML + (t - t0) / (t1 - t0) * pw

    def sy(y):
        return y0 + MT + (hi - y) / (hi - lo) * ph

    out = [f'<text x="{ML}" y="{y0 + MT - 8}" font-size="12">{escape(title)}</text>',
           f'<rect x="{ML}" y="{y0 + MT}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>']
    for frac in (0.0, 0.5, 1.0):
        yv = lo + frac * (hi - lo)
        out.append(f'<text x="{ML - 4}" y="{sy(yv) + 4:.1f}" font-size="10" '
                   f'text-anchor="end">{_fmt(yv)}</text>')
        tv = t0 + frac * (t1 - t0)
        out.append(f'<text x="{sx(tv):.1f}" y="{y0 + MT + ph + 14}" font-size="10" '
                   f'text-anchor="middle">{_fmt(tv)}</text>')
    for i, (label, t, y, dashed) in enumerate(series):
        color = COLORS[i % len(COLORS)]
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(t, y) if math.isfinite(b))
        dash = ' stroke-dasharray="6,4"' if dashed else ""
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.3"{dash} points="{pts}"/>')
        ly = y0 + MT + 12 + 16 * i
        out.append(f'<line x1="{W - MR + 10}" y1="{ly}" x2="{W - MR + 34}" y2="{ly}" '
                   f'stroke="{color}"{dash}/>')
        out.append(f'<text x="{W - MR + 40}" y="{ly + 4}" font-size="11">{escape(label)}</text>')
    return out


def write_svg(path, panels):
    """``panels`` is a list of (title, series) pairs stacked vertically."""
    height = H * max(len(panels), 1)
    body = []
    for i, (title, series) in enumerate(panels):
        body += panel(series, title, i * H)
    svg = (f'<?xml version="1.0" encoding="UTF-8"?>\n'
           f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{W}" height="{height}" '
           f'viewBox="0 0 {W} {height}" font-family="sans-serif">\n'
           f'<rect width="100%" height="100%" fill="white"/>\n' + "\n".join(body) + "\n</svg>\n")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(svg)
