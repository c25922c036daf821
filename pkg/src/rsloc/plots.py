"""Minimal SVG line charts (linear or log-scale y axis)."""

from html import escape

import numpy as np

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def _ticks(lo, hi, count=5):
    return np.linspace(lo, hi, count)


def line_chart(series, title="", xlabel="", ylabel="", log_y=False, width=640, height=400):
    """SVG document for ``series``: a list of ``(label, x, y)`` or ``(label, x, y, dashed)``.

    With ``log_y`` nonpositive values are dropped.
    """
    margin = {"l": 70, "r": 170, "t": 40, "b": 50}
    pw = width - margin["l"] - margin["r"]
    ph = height - margin["t"] - margin["b"]
    prepared = []
    for item in series:
        label, x, y = item[:3]
        dashed = item[3] if len(item) > 3 else False
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        ok = np.isfinite(x) & np.isfinite(y)
        if log_y:
            ok &= y > 0
            y = np.where(ok, np.log10(np.where(ok, y, 1.0)), np.nan)
        prepared.append((label, x[ok], y[ok], dashed))
    xs = np.concatenate([p[1] for p in prepared]) if prepared else np.array([0.0, 1.0])
    ys = np.concatenate([p[2] for p in prepared]) if prepared else np.array([0.0, 1.0])
    if len(xs) == 0:
        xs, ys = np.array([0.0, 1.0]), np.array([0.0, 1.0])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5

    def px(v):
        return margin["l"] + (v - x0) / (x1 - x0) * pw

    def py(v):
        return margin["t"] + ph - (v - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<rect x="{margin["l"]}" y="{margin["t"]}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
    ]
    for v in _ticks(x0, x1):
        out.append(f'<text x="{px(v):.1f}" y="{margin["t"] + ph + 18}" text-anchor="middle">{v:.3g}</text>')
    for v in _ticks(y0, y1):
        lab = f"1e{v:.2g}" if log_y else f"{v:.3g}"
        out.append(f'<text x="{margin["l"] - 6}" y="{py(v) + 4:.1f}" text-anchor="end">{lab}</text>')
        out.append(
            f'<line x1="{margin["l"]}" x2="{margin["l"] + pw}" y1="{py(v):.1f}" y2="{py(v):.1f}" stroke="#eee"/>'
        )
    out.append(f'<text x="{margin["l"] + pw / 2:.1f}" y="{height - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(
        f'<text x="16" y="{margin["t"] + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {margin["t"] + ph / 2:.1f})">{escape(ylabel)}</text>'
    )
    for i, (label, x, y, dashed) in enumerate(prepared):
        color = _COLORS[i % len(_COLORS)]
        if len(x):
            pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y))
            dash = ' stroke-dasharray="6,4"' if dashed else ""
            out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>')
        ly = margin["t"] + 14 + 18 * i
        lx = margin["l"] + pw + 10
        out.append(f'<line x1="{lx}" x2="{lx + 20}" y1="{ly - 4}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 26}" y="{ly}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_chart(path, *args, **kwargs):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(line_chart(*args, **kwargs))
