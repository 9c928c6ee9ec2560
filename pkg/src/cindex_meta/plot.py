"""Static SVG bubble plot of study estimates with fitted C(τ) curves.

Bubble areas are proportional to the inverse variances of the study
estimates. Styling is fixed so identical inputs give identical bytes.
"""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

__all__ = ["render_svg", "nice_ticks"]

WIDTH, HEIGHT = 720, 480
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 170, 20, 60
MAX_RADIUS = 14.0
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")
BUBBLE_FILL = "#7f7f7f"
ORACLE_COLOR = "#000000"
FONT = "font-family=\"DejaVu Sans, Arial, sans-serif\" font-size=\"12\""


def nice_ticks(lo: float, hi: float, target: int = 6) -> np.ndarray:
    """Round-numbered ticks covering [lo, hi]."""
    span = hi - lo
    raw = span / max(target - 1, 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw)
    start = math.ceil(lo / step - 1e-9) * step
    ticks = np.arange(start, hi + step * 1e-9, step)
    return np.round(ticks, 10)


def _f(x: float) -> str:
    return f"{x:.2f}"


def _tick_label(x: float) -> str:
    return f"{x:.10g}"


def render_svg(studies, curves=(), oracle=None, title: str | None = None) -> str:
    """SVG document as text.

    Parameters
    ----------
    studies : sequence of StudySummary
        Drawn as bubbles at ``(tau, c_hat)``.
    curves : sequence of (label, tau, c)
        Fitted curves, one polyline each.
    oracle : (tau, c), optional
        True curve, drawn dashed in black.
    """
    studies = list(studies)
    curves = list(curves)
    if not studies and not curves:
        raise ValueError("nothing to plot")
    xs = [s.tau for s in studies] + [float(t) for _, tt, _ in curves for t in tt]
    ys = [s.c_hat for s in studies] + [float(c) for _, _, cc in curves for c in cc]
    if oracle is not None:
        xs += [float(t) for t in oracle[0]]
        ys += [float(c) for c in oracle[1]]
    x_lo, x_hi = 0.0, max(xs) * 1.05
    y_lo, y_hi = min(ys), max(ys)
    pad = max(0.05 * (y_hi - y_lo), 0.01)
    y_lo, y_hi = max(y_lo - pad, 0.0), min(y_hi + pad, 1.0)
    if not y_hi > y_lo:
        y_lo, y_hi = max(y_lo - 0.05, 0.0), min(y_hi + 0.05, 1.0)

    pw = WIDTH - MARGIN_L - MARGIN_R
    ph = HEIGHT - MARGIN_T - MARGIN_B
    sx = lambda x: MARGIN_L + (x - x_lo) / (x_hi - x_lo) * pw
    sy = lambda y: MARGIN_T + (y_hi - y) / (y_hi - y_lo) * ph

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>',
    ]
    if title:
        out.append(f'<title>{escape(title)}</title>')
    # axes and ticks
    x0, y0 = MARGIN_L, MARGIN_T + ph
    out.append(f'<line x1="{x0}" y1="{y0}" x2="{x0 + pw}" y2="{y0}" stroke="#000000"/>')
    out.append(f'<line x1="{x0}" y1="{MARGIN_T}" x2="{x0}" y2="{y0}" stroke="#000000"/>')
    for t in nice_ticks(x_lo, x_hi):
        px = _f(sx(t))
        out.append(f'<line x1="{px}" y1="{y0}" x2="{px}" y2="{y0 + 5}" stroke="#000000"/>')
        out.append(f'<text x="{px}" y="{y0 + 18}" text-anchor="middle" {FONT}>{_tick_label(t)}</text>')
    for t in nice_ticks(y_lo, y_hi):
        py = _f(sy(t))
        out.append(f'<line x1="{x0 - 5}" y1="{py}" x2="{x0}" y2="{py}" stroke="#000000"/>')
        out.append(f'<text x="{x0 - 8}" y="{py}" text-anchor="end" dominant-baseline="middle" {FONT}>'
                   f'{_tick_label(t)}</text>')
    out.append(f'<text x="{_f(x0 + pw / 2)}" y="{HEIGHT - 15}" text-anchor="middle" {FONT}>τ</text>')
    out.append(f'<text x="18" y="{_f(MARGIN_T + ph / 2)}" text-anchor="middle" {FONT} '
               f'transform="rotate(-90 18 {_f(MARGIN_T + ph / 2)})">C(τ)</text>')
    # bubbles
    if studies:
        w = np.array([1.0 / s.var_hat for s in studies])
        radii = MAX_RADIUS * np.sqrt(w / w.max())
        for s, r in zip(studies, radii):
            out.append(
                f'<circle cx="{_f(sx(s.tau))}" cy="{_f(sy(s.c_hat))}" r="{r:.4f}" '
                f'fill="{BUBBLE_FILL}" fill-opacity="0.4" stroke="{BUBBLE_FILL}">'
                f'<title>{escape(s.study_id)}</title></circle>'
            )
    # curves
    legend = []
    if oracle is not None:
        pts = " ".join(f"{_f(sx(t))},{_f(sy(c))}" for t, c in zip(*oracle))
        out.append(f'<path d="M {pts.replace(" ", " L ")}" fill="none" stroke="{ORACLE_COLOR}" '
                   f'stroke-width="1.5" stroke-dasharray="6,4"/>')
        legend.append(("true C(τ)", ORACLE_COLOR))
    for i, (label, tt, cc) in enumerate(curves):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{_f(sx(float(t)))},{_f(sy(float(c)))}" for t, c in zip(tt, cc))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        legend.append((str(label), color))
    lx = MARGIN_L + pw + 15
    for i, (label, color) in enumerate(legend):
        ly = MARGIN_T + 10 + 18 * i
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 26}" y="{ly}" dominant-baseline="middle" {FONT}>{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
