"""Hand-built SVG plot of contrast vs. gap width with the fitted curve, the
threshold line, and the crossing distance. No plotting library: output bytes
are a pure function of the inputs.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

from .ctf import CtfModelFit, CtfRecord, ctf_model

_W, _H = 720, 480
_ML, _MR, _MT, _MB = 64, 20, 28, 56


def _nice_ticks(lo: float, hi: float, target: int = 6) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / target
    mag = 10 ** math.floor(math.log10(raw))
    for mult in (1, 2, 2.5, 5, 10):
        step = mult * mag
        if raw <= step:
            break
    first = math.ceil(lo / step) * step
    ticks = []
    t = first
    while t <= hi + 1e-12:
        ticks.append(round(t, 10))
        t += step
    return ticks


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def render_ctf_plot(
    records: Sequence[CtfRecord],
    fit: Optional[CtfModelFit],
    threshold: float,
    d_star: Optional[float],
    log_x: bool = False,
) -> str:
    """SVG text. Valid records plot as filled dots, excluded ones as hollow
    gray dots; the fitted curve, threshold line, and d* marker overlay them."""
    pts = [(r.d, r.c_test, r.valid) for r in records]
    ds = [p[0] for p in pts] or [1.0]
    d_lo = min(ds)
    d_hi = max(ds)
    if log_x:
        d_lo = max(d_lo, 1e-3)
        x_lo, x_hi = math.log10(d_lo * 0.8), math.log10(d_hi * 1.1)
    else:
        x_lo, x_hi = 0.0, d_hi * 1.05
    y_lo, y_hi = 0.0, 1.05

    pw = _W - _ML - _MR
    ph = _H - _MT - _MB

    def sx(d: float) -> float:
        v = math.log10(max(d, 1e-9)) if log_x else d
        return _ML + (v - x_lo) / (x_hi - x_lo) * pw

    def sy(c: float) -> float:
        return _MT + (y_hi - min(max(c, y_lo), y_hi)) / (y_hi - y_lo) * ph

    parts: list[str] = []
    parts.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="12">'
    )
    parts.append(f'<rect width="{_W}" height="{_H}" fill="white"/>')
    parts.append(
        f'<rect x="{_ML}" y="{_MT}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>'
    )

    if log_x:
        xticks = []
        e = math.floor(x_lo)
        while e <= math.ceil(x_hi):
            v = 10.0**e
            if x_lo <= e <= x_hi:
                xticks.append(v)
            e += 1
    else:
        xticks = _nice_ticks(x_lo, x_hi)
    for t in xticks:
        x = sx(t)
        if x < _ML - 0.5 or x > _W - _MR + 0.5:
            continue
        parts.append(f'<line x1="{x:.2f}" y1="{_MT + ph}" x2="{x:.2f}" y2="{_MT + ph + 5}" stroke="#444"/>')
        parts.append(
            f'<text x="{x:.2f}" y="{_MT + ph + 20}" text-anchor="middle">{_fmt(t)}</text>'
        )
    for t in _nice_ticks(y_lo, y_hi, 5):
        y = sy(t)
        parts.append(f'<line x1="{_ML - 5}" y1="{y:.2f}" x2="{_ML}" y2="{y:.2f}" stroke="#444"/>')
        parts.append(
            f'<text x="{_ML - 9}" y="{y + 4:.2f}" text-anchor="end">{_fmt(t)}</text>'
        )
    parts.append(
        f'<text x="{_ML + pw / 2:.2f}" y="{_H - 16}" text-anchor="middle">gap width d (m)</text>'
    )
    parts.append(
        f'<text x="18" y="{_MT + ph / 2:.2f}" text-anchor="middle" '
        f'transform="rotate(-90 18 {_MT + ph / 2:.2f})">contrast</text>'
    )

    # Threshold line.
    ty = sy(threshold)
    parts.append(
        f'<line x1="{_ML}" y1="{ty:.2f}" x2="{_ML + pw}" y2="{ty:.2f}" '
        f'stroke="#b00" stroke-dasharray="6 4"/>'
    )
    parts.append(
        f'<text x="{_ML + pw - 4}" y="{ty - 5:.2f}" text-anchor="end" fill="#b00">'
        f"t = {_fmt(threshold)}</text>"
    )

    # Fitted curve.
    if fit is not None:
        n_seg = 200
        path = []
        for k in range(n_seg + 1):
            if log_x:
                d = 10 ** (x_lo + (x_hi - x_lo) * k / n_seg)
            else:
                d = max(x_lo + (x_hi - x_lo) * k / n_seg, 1e-6)
            c = ctf_model(d, fit.amplitude, fit.sigma_m)
            path.append(f"{'M' if not path else 'L'}{sx(d):.2f},{sy(c):.2f}")
        parts.append(f'<path d="{" ".join(path)}" fill="none" stroke="#06c" stroke-width="1.5"/>')

    # d* marker.
    if d_star is not None and d_star > 0:
        x = sx(d_star)
        if _ML <= x <= _ML + pw:
            parts.append(
                f'<line x1="{x:.2f}" y1="{_MT}" x2="{x:.2f}" y2="{_MT + ph}" '
                f'stroke="#080" stroke-dasharray="4 4"/>'
            )
            parts.append(
                f'<text x="{x + 4:.2f}" y="{_MT + 14}" fill="#080">d* = {_fmt(d_star)} m</text>'
            )

    # Points (invalid first so valid dots draw on top).
    for d, c, valid in pts:
        if not valid:
            parts.append(
                f'<circle cx="{sx(d):.2f}" cy="{sy(c):.2f}" r="3.5" fill="none" stroke="#999"/>'
            )
    for d, c, valid in pts:
        if valid:
            parts.append(f'<circle cx="{sx(d):.2f}" cy="{sy(c):.2f}" r="3.5" fill="#06c"/>')

    parts.append("</svg>")
    return "\n".join(parts) + "\n"
