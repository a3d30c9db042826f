"""Small deterministic SVG charts.

Output bytes depend only on the inputs, and every plotted value is embedded
verbatim (``repr``) in a ``data-value`` attribute so files can be checked
against the numbers they were drawn from.
"""

from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape, quoteattr

WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=64, right=150, top=40, bottom=52)
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f")


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def _frame(title, xlabel, ylabel, x_range, y_range):
    x0, x1 = x_range
    y0, y1 = y_range
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def sx(x):
        return MARGIN["left"] + (x - x0) / (x1 - x0 or 1.0) * pw

    def sy(y):
        return MARGIN["top"] + ph - (y - y0) / (y1 - y0 or 1.0) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
        f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" '
        f'fill="none" stroke="#444"/>',
        f'<text x="{MARGIN["left"] + pw / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="16" y="{MARGIN["top"] + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {MARGIN["top"] + ph / 2:.1f})">{escape(ylabel)}</text>',
    ]
    for i in range(5):
        yv = y0 + (y1 - y0) * i / 4
        parts.append(f'<text x="{MARGIN["left"] - 6}" y="{_fmt(sy(yv) + 4)}" text-anchor="end">{yv:.3g}</text>')
        xv = x0 + (x1 - x0) * i / 4
        parts.append(f'<text x="{_fmt(sx(xv))}" y="{MARGIN["top"] + ph + 16}" text-anchor="middle">{xv:.3g}</text>')
    return parts, sx, sy


def line_chart(series: dict[str, list[tuple[float, float]]], title: str, xlabel: str, ylabel: str,
               y_range: tuple[float, float] = (0.0, 1.0), x_name: str = "x") -> str:
    """One polyline per series, with a legend; series are drawn in sorted name order."""
    xs = [x for pts in series.values() for x, _ in pts] or [0.0, 1.0]
    x_range = (min(xs), max(xs) if max(xs) > min(xs) else min(xs) + 1)
    parts, sx, sy = _frame(title, xlabel, ylabel, x_range, y_range)
    for n, name in enumerate(sorted(series)):
        color = PALETTE[n % len(PALETTE)]
        pts = [(x, y) for x, y in series[name] if math.isfinite(y)]
        coords = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in pts)
        parts.append(f'<g class="series" data-method={quoteattr(name)}>')
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{coords}"/>')
        for x, y in pts:
            parts.append(f'<circle cx="{_fmt(sx(x))}" cy="{_fmt(sy(y))}" r="3" fill="{color}" '
                         f'data-{x_name}="{x!r}" data-value="{y!r}"/>')
        parts.append("</g>")
        ly = MARGIN["top"] + 14 + 18 * n
        lx = WIDTH - MARGIN["right"] + 12
        parts.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 18}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{lx + 24}" y="{ly}">{escape(name)}</text>')
    parts.append("</svg>\n")
    return "\n".join(parts)


def bar_chart(edges: list[float], counts: list[int], title: str, xlabel: str, ylabel: str = "count",
              extra: dict | None = None) -> str:
    top = max(counts, default=0) or 1
    parts, sx, sy = _frame(title, xlabel, ylabel, (edges[0], edges[-1]), (0.0, float(top)))
    for lo, hi, c in zip(edges[:-1], edges[1:], counts):
        x, y = sx(lo), sy(c)
        parts.append(f'<rect x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(sx(hi) - x)}" '
                     f'height="{_fmt(sy(0.0) - y)}" fill="#1f77b4" stroke="white" '
                     f'data-lo="{lo!r}" data-hi="{hi!r}" data-value="{c}"/>')
    for n, (key, val) in enumerate(sorted((extra or {}).items())):
        parts.append(f'<text x="{WIDTH - MARGIN["right"] + 8}" y="{MARGIN["top"] + 14 + 18 * n}" '
                     f'data-{escape(key)}="{val!r}">{escape(key)}={val:.4g}</text>')
    parts.append("</svg>\n")
    return "\n".join(parts)


def emit_accuracy_plot(curves: dict[str, list[float]], path) -> str:
    """Average accuracy after each task, one line per method."""
    series = {m: [(float(k), a) for k, a in enumerate(c, start=1)] for m, c in curves.items()}
    svg = line_chart(series, "Average accuracy over the task sequence", "tasks learned", "A_k", x_name="k")
    Path(path).write_text(svg)
    return svg


def emit_lca_plot(curves: dict[str, list[float]], path) -> str:
    series = {m: [(float(b), z) for b, z in enumerate(c)] for m, c in curves.items()}
    svg = line_chart(series, "Learning curve", "minibatches on current task", "Z_b", x_name="b")
    Path(path).write_text(svg)
    return svg
