"""Minimal deterministic SVG charts.

Reports must regenerate bit-identically from the same inputs, so figures
are emitted by hand with fixed float formatting instead of going through a
plotting library that embeds timestamps or generated ids.  Line charts and
heatmaps are all the harness needs.
"""

from __future__ import annotations

import math

import numpy as np

_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"]

_W, _H = 640, 420
_ML, _MR, _MT, _MB = 70, 20, 40, 55  # margins


def _f(x: float) -> str:
    return f"{x:.6g}"


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    for mult in (1, 2, 2.5, 5, 10):
        if raw <= mult * mag:
            step = mult * mag
            break
    start = math.ceil(lo / step) * step
    out = []
    t = start
    while t <= hi + 1e-12 * step:
        out.append(round(t, 12))
        t += step
    return out


def _axes(title: str, xlabel: str, ylabel: str, xlo, xhi, ylo, yhi) -> list[str]:
    px = lambda x: _ML + (x - xlo) / (xhi - xlo) * (_W - _ML - _MR)
    py = lambda y: _H - _MB - (y - ylo) / (yhi - ylo) * (_H - _MT - _MB)
    parts = [
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2}" y="22" text-anchor="middle" font-size="15" font-family="sans-serif">{title}</text>',
        f'<text x="{(_ML + _W - _MR) / 2}" y="{_H - 12}" text-anchor="middle" font-size="12" font-family="sans-serif">{xlabel}</text>',
        f'<text x="16" y="{(_MT + _H - _MB) / 2}" text-anchor="middle" font-size="12" font-family="sans-serif" transform="rotate(-90 16 {(_MT + _H - _MB) / 2})">{ylabel}</text>',
        f'<rect x="{_ML}" y="{_MT}" width="{_W - _ML - _MR}" height="{_H - _MT - _MB}" fill="none" stroke="#444"/>',
    ]
    for t in _ticks(xlo, xhi):
        if xlo <= t <= xhi:
            parts.append(
                f'<line x1="{_f(px(t))}" y1="{_H - _MB}" x2="{_f(px(t))}" y2="{_H - _MB + 4}" stroke="#444"/>'
                f'<text x="{_f(px(t))}" y="{_H - _MB + 17}" text-anchor="middle" font-size="10" font-family="sans-serif">{_f(t)}</text>'
            )
    for t in _ticks(ylo, yhi):
        if ylo <= t <= yhi:
            parts.append(
                f'<line x1="{_ML - 4}" y1="{_f(py(t))}" x2="{_ML}" y2="{_f(py(t))}" stroke="#444"/>'
                f'<text x="{_ML - 7}" y="{_f(py(t) + 3)}" text-anchor="end" font-size="10" font-family="sans-serif">{_f(t)}</text>'
            )
    return parts


def line_chart(
    series: list[tuple],  # (label, xs, ys) or (label, xs, ys, (lo, hi) band)
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
) -> str:
    """A multi-series line chart with optional shaded bands, as SVG text."""
    if not series:
        raise ValueError("no series to plot")
    all_x = np.concatenate([np.asarray(s[1], dtype=float) for s in series])
    ys_list = [np.asarray(s[2], dtype=float) for s in series]
    all_y = np.concatenate(
        ys_list + [np.asarray(b, dtype=float).ravel() for s in series if len(s) > 3 for b in s[3]]
    )
    if all_x.size == 0:
        raise ValueError("series are empty")
    xlo, xhi = float(all_x.min()), float(all_x.max())
    ylo, yhi = float(all_y.min()), float(all_y.max())
    if xhi == xlo:
        xlo, xhi = xlo - 0.5, xhi + 0.5
    if yhi == ylo:
        ylo, yhi = ylo - 0.5, yhi + 0.5
    pad = 0.05 * (yhi - ylo)
    ylo, yhi = ylo - pad, yhi + pad

    px = lambda x: _ML + (x - xlo) / (xhi - xlo) * (_W - _ML - _MR)
    py = lambda y: _H - _MB - (y - ylo) / (yhi - ylo) * (_H - _MT - _MB)
    parts = _axes(title, xlabel, ylabel, xlo, xhi, ylo, yhi)

    for i, s in enumerate(series):
        label, xs, ys = s[0], np.asarray(s[1], dtype=float), np.asarray(s[2], dtype=float)
        color = _COLORS[i % len(_COLORS)]
        if len(s) > 3:
            lo, hi = (np.asarray(b, dtype=float) for b in s[3])
            pts = [f"{_f(px(x))},{_f(py(y))}" for x, y in zip(xs, hi)]
            pts += [f"{_f(px(x))},{_f(py(y))}" for x, y in zip(xs[::-1], lo[::-1])]
            parts.append(f'<polygon points="{" ".join(pts)}" fill="{color}" opacity="0.15"/>')
        pts = " ".join(f"{_f(px(x))},{_f(py(y))}" for x, y in zip(xs, ys))
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
        for x, y in zip(xs, ys):
            parts.append(f'<circle cx="{_f(px(x))}" cy="{_f(py(y))}" r="2.5" fill="{color}"/>')
        ly = _MT + 16 + 14 * i
        parts.append(
            f'<line x1="{_W - _MR - 110}" y1="{ly - 4}" x2="{_W - _MR - 90}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>'
            f'<text x="{_W - _MR - 85}" y="{ly}" font-size="11" font-family="sans-serif">{label}</text>'
        )
    return _wrap(parts)


def heatmap(
    matrix: np.ndarray,
    x_labels: list,
    y_labels: list,
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
) -> str:
    """Matrix heatmap with per-cell value annotations; values in [0, 1]."""
    m = np.asarray(matrix, dtype=float)
    rows, cols = m.shape
    if rows != len(y_labels) or cols != len(x_labels):
        raise ValueError("label counts must match the matrix shape")
    cw = (_W - _ML - _MR) / cols
    ch = (_H - _MT - _MB) / rows
    parts = [
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2}" y="22" text-anchor="middle" font-size="15" font-family="sans-serif">{title}</text>',
        f'<text x="{(_ML + _W - _MR) / 2}" y="{_H - 10}" text-anchor="middle" font-size="12" font-family="sans-serif">{xlabel}</text>',
        f'<text x="16" y="{(_MT + _H - _MB) / 2}" text-anchor="middle" font-size="12" font-family="sans-serif" transform="rotate(-90 16 {(_MT + _H - _MB) / 2})">{ylabel}</text>',
    ]
    for i in range(rows):
        for j in range(cols):
            v = float(m[i, j])
            # blue-to-yellow ramp without external colormaps
            r = int(255 * v)
            g = int(200 * v + 30)
            b = int(180 * (1 - v) + 40)
            x = _ML + j * cw
            y = _MT + i * ch
            parts.append(
                f'<rect x="{_f(x)}" y="{_f(y)}" width="{_f(cw)}" height="{_f(ch)}" fill="rgb({r},{g},{b})" stroke="#666" stroke-width="0.5"/>'
            )
            tcol = "#000" if v > 0.5 else "#fff"
            parts.append(
                f'<text x="{_f(x + cw / 2)}" y="{_f(y + ch / 2 + 4)}" text-anchor="middle" font-size="11" fill="{tcol}" font-family="sans-serif">{v:.3f}</text>'
            )
    for j, lab in enumerate(x_labels):
        parts.append(
            f'<text x="{_f(_ML + (j + 0.5) * cw)}" y="{_H - _MB + 16}" text-anchor="middle" font-size="10" font-family="sans-serif">{lab}</text>'
        )
    for i, lab in enumerate(y_labels):
        parts.append(
            f'<text x="{_ML - 6}" y="{_f(_MT + (i + 0.5) * ch + 3)}" text-anchor="end" font-size="10" font-family="sans-serif">{lab}</text>'
        )
    return _wrap(parts)


def _wrap(parts: list[str]) -> str:
    body = "\n".join(parts)
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">\n{body}\n</svg>\n'
    )
