"""Minimal SVG 1.1 scatter plots, no plotting library required.

One <circle> per sample, in input order, so a plot can be checked by
counting elements. Output is a pure function of the inputs.
"""

from xml.sax.saxutils import escape

import numpy as np

from .errors import LengthMismatch, UnknownColumn
from .fileio import atomic_write, read_csv

WIDTH = 640
HEIGHT = 520
MARGIN = (30, 20, 60, 70)  # top, right, bottom, left

PALETTE = (
    "#e6194b", "#3cb44b", "#ffe119", "#4363d8", "#f58231", "#911eb4", "#46f0f0", "#f032e6",
    "#bcf60c", "#fabebe", "#008080", "#e6beff", "#9a6324", "#fffac8", "#800000", "#aaffc3",
    "#808000", "#ffd8b1", "#000075", "#808080",
)


def _viridis_like(t):
    """Blue -> green -> yellow ramp for t in [0, 1]."""
    stops = np.array([[68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37]], dtype=float)
    pos = np.clip(t, 0.0, 1.0) * (len(stops) - 1)
    i = np.minimum(pos.astype(int), len(stops) - 2)
    f = (pos - i)[:, None]
    return np.round(stops[i] * (1 - f) + stops[i + 1] * f).astype(int)


def _hex(rgb):
    return "#%02x%02x%02x" % tuple(int(v) for v in rgb)


def _ticks(lo, hi, n=5):
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** np.floor(np.log10(raw))
    step = min((s * mag for s in (1, 2, 5, 10) if s * mag >= raw), default=10 * mag)
    start = np.ceil(lo / step) * step
    return [float(v) for v in np.arange(start, hi + step * 1e-9, step)]


def point_colors(n, values=None, categorical=False, rgb=None):
    """Fill color per point: explicit RGB, categorical palette, or ramp."""
    if rgb is not None:
        rgb = np.asarray(rgb)
        if len(rgb) != n:
            raise LengthMismatch(f"{len(rgb)} colors for {n} points")
        return [_hex(c) for c in np.clip(np.round(rgb), 0, 255)]
    if values is None:
        return ["#1f4e79"] * n
    values = np.asarray(values)
    if len(values) != n:
        raise LengthMismatch(f"{len(values)} color values for {n} points")
    if categorical:
        cats = {v: i for i, v in enumerate(sorted(set(values.tolist())))}
        return [PALETTE[cats[v] % len(PALETTE)] for v in values.tolist()]
    v = values.astype(float)
    lo, hi = np.nanmin(v), np.nanmax(v)
    t = np.zeros_like(v) if hi <= lo else (v - lo) / (hi - lo)
    return [_hex(c) for c in _viridis_like(t)]


def scatter_svg(x, y, x_label="x", y_label="y", title="", values=None, categorical=False,
                rgb=None, radius=2.0):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise LengthMismatch(f"x has {len(x)} points, y has {len(y)}")
    colors = point_colors(len(x), values, categorical, rgb)
    top, right, bottom, left = MARGIN
    pw, ph = WIDTH - left - right, HEIGHT - top - bottom
    xlo, xhi = (float(x.min()), float(x.max())) if len(x) else (0.0, 1.0)
    ylo, yhi = (float(y.min()), float(y.max())) if len(y) else (0.0, 1.0)
    xpad = (xhi - xlo) * 0.04 or 1.0
    ypad = (yhi - ylo) * 0.04 or 1.0
    xlo, xhi, ylo, yhi = xlo - xpad, xhi + xpad, ylo - ypad, yhi + ypad

    def sx(v):
        return left + (v - xlo) / (xhi - xlo) * pw

    def sy(v):
        return top + ph - (v - ylo) / (yhi - ylo) * ph

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    if title:
        out.append(f'<text x="{WIDTH / 2:.1f}" y="{top - 10}" text-anchor="middle" font-size="14">{escape(title)}</text>')
    for t in _ticks(xlo, xhi):
        out.append(f'<line x1="{sx(t):.2f}" y1="{top + ph}" x2="{sx(t):.2f}" y2="{top + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{sx(t):.2f}" y="{top + ph + 18}" text-anchor="middle" font-size="11">{t:g}</text>')
    for t in _ticks(ylo, yhi):
        out.append(f'<line x1="{left - 5}" y1="{sy(t):.2f}" x2="{left}" y2="{sy(t):.2f}" stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{sy(t) + 4:.2f}" text-anchor="end" font-size="11">{t:g}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{HEIGHT - 15}" text-anchor="middle" font-size="13">{escape(x_label)}</text>')
    out.append(f'<text x="18" y="{top + ph / 2:.1f}" text-anchor="middle" font-size="13" '
               f'transform="rotate(-90 18 {top + ph / 2:.1f})">{escape(y_label)}</text>')
    out.append('<g stroke="none">')
    for xi, yi, c in zip(x, y, colors):
        out.append(f'<circle cx="{sx(xi):.2f}" cy="{sy(yi):.2f}" r="{radius:g}" fill="{c}"/>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def column(header, rows, name):
    lower = [h.lower() for h in header]
    if name.lower() not in lower:
        raise UnknownColumn(f"no column {name!r}; available: {', '.join(header)}")
    j = lower.index(name.lower())
    return [r[j] for r in rows]


def plot_csv(csv_path, svg_path, x_col, y_col, color_col=None, categorical=False, title=""):
    header, rows = read_csv(csv_path)
    x = np.array(column(header, rows, x_col), dtype=float)
    y = np.array(column(header, rows, y_col), dtype=float)
    values = None
    if color_col is not None:
        raw = column(header, rows, color_col)
        if categorical:
            values = np.array(raw, dtype=object)
        else:
            values = np.array(raw, dtype=float)
    svg = scatter_svg(x, y, x_label=x_col, y_label=y_col, title=title, values=values, categorical=categorical)
    atomic_write(svg_path, svg)
    return len(x)
