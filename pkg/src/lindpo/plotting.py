"""Static SVG line charts with deterministic output (fixed number formatting,
no timestamps, no random ids)."""

import math
from xml.sax.saxutils import escape

import numpy as np

from .objectives import UtilityKind, UtilitySpec, normalize_utility

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _f(v):
    return f"{v:.2f}"


def _nice_ticks(lo, hi, count=5):
    if not (math.isfinite(lo) and math.isfinite(hi)) or hi <= lo:
        return [lo] if math.isfinite(lo) else []
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    ticks = []
    v = start
    while v <= hi + 1e-9 * step:
        ticks.append(round(v, 12))
        v += step
    return ticks


def _panel(series, x0, y0, w, h, title, xlabel, ylabel, xlim=None, ylim=None):
    """One set of axes; ``series`` is a list of (label, xs, ys)."""
    pts = [(x, y) for _, xs, ys in series for x, y in zip(xs, ys) if math.isfinite(x) and math.isfinite(y)]
    if xlim is None:
        xlim = (min(p[0] for p in pts), max(p[0] for p in pts)) if pts else (0.0, 1.0)
    if ylim is None:
        ylim = (min(p[1] for p in pts), max(p[1] for p in pts)) if pts else (0.0, 1.0)
    xlo, xhi = xlim
    ylo, yhi = ylim
    if xhi <= xlo:
        xlo, xhi = xlo - 0.5, xhi + 0.5
    if yhi <= ylo:
        ylo, yhi = ylo - 0.5, yhi + 0.5
    left, right, top, bottom = 60, 20, 30, 45
    pw, ph = w - left - right, h - top - bottom
    sx = lambda x: x0 + left + (x - xlo) / (xhi - xlo) * pw
    sy = lambda y: y0 + top + (1 - (y - ylo) / (yhi - ylo)) * ph
    out = [
        f'<text x="{_f(x0 + w / 2)}" y="{_f(y0 + 18)}" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<rect x="{_f(x0 + left)}" y="{_f(y0 + top)}" width="{_f(pw)}" height="{_f(ph)}" fill="none" stroke="#000"/>',
    ]
    for t in _nice_ticks(xlo, xhi):
        out.append(f'<line x1="{_f(sx(t))}" y1="{_f(y0 + top + ph)}" x2="{_f(sx(t))}" y2="{_f(y0 + top + ph + 4)}" stroke="#000"/>')
        out.append(f'<text x="{_f(sx(t))}" y="{_f(y0 + top + ph + 16)}" text-anchor="middle" font-size="10">{t:.4g}</text>')
    for t in _nice_ticks(ylo, yhi):
        out.append(f'<line x1="{_f(x0 + left - 4)}" y1="{_f(sy(t))}" x2="{_f(x0 + left)}" y2="{_f(sy(t))}" stroke="#000"/>')
        out.append(f'<text x="{_f(x0 + left - 6)}" y="{_f(sy(t) + 3)}" text-anchor="end" font-size="10">{t:.4g}</text>')
    out.append(f'<text x="{_f(x0 + left + pw / 2)}" y="{_f(y0 + h - 8)}" text-anchor="middle" font-size="11">{escape(xlabel)}</text>')
    out.append(
        f'<text x="{_f(x0 + 14)}" y="{_f(y0 + top + ph / 2)}" text-anchor="middle" font-size="11" '
        f'transform="rotate(-90 {_f(x0 + 14)} {_f(y0 + top + ph / 2)})">{escape(ylabel)}</text>'
    )
    for i, (label, xs, ys) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        coords = [f"{_f(sx(x))},{_f(sy(y))}" for x, y in zip(xs, ys) if math.isfinite(x) and math.isfinite(y)]
        if len(coords) > 1:
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{" ".join(coords)}"/>')
        elif coords:
            cx, cy = coords[0].split(",")
            out.append(f'<circle cx="{cx}" cy="{cy}" r="2.5" fill="{color}"/>')
        if len(series) > 1:
            ly = y0 + top + 14 * (i + 1)
            out.append(f'<line x1="{_f(x0 + left + 8)}" y1="{_f(ly - 4)}" x2="{_f(x0 + left + 26)}" y2="{_f(ly - 4)}" stroke="{color}" stroke-width="2"/>')
            out.append(f'<text x="{_f(x0 + left + 30)}" y="{_f(ly)}" font-size="10">{escape(label)}</text>')
    return out


def _document(width, height, body):
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif">'
    )
    return "\n".join([head, f'<rect width="{width}" height="{height}" fill="#fff"/>', *body, "</svg>"]) + "\n"


def metrics_svg(rows, columns=("implicit_acc", "mean_weight", "pref_mass", "loss")):
    """One panel per column against ``step``; an empty ``rows`` gives empty axes."""
    width, panel_h = 640, 220
    body = []
    steps = [float(r["step"]) for r in rows]
    for i, col in enumerate(columns):
        ys = [float(r[col]) for r in rows]
        body += _panel([(col, steps, ys)], 0, i * panel_h, width, panel_h, col, "step", col)
    return _document(width, panel_h * len(columns), body)


def utility_svg(points=201, window=5.0):
    """Normalized utility curves of all five kinds over ``[-window, window]``."""
    xs = np.linspace(-window, window, points)
    series = []
    for kind in UtilityKind:
        ys = np.asarray(normalize_utility(UtilitySpec(kind=kind, norm_window=window), xs))
        series.append((kind.value, xs.tolist(), ys.tolist()))
    body = _panel(series, 0, 0, 640, 420, "normalized utility", "x", "u(x)", (-window, window), (0.0, 1.0))
    return _document(640, 420, body)
