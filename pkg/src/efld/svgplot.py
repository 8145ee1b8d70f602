"""Deterministic SVG line charts written by hand (800 x 600 canvas).

Identical inputs give byte-identical output: coordinates use fixed decimal
formatting and the palette and layout are constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from html import escape
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FormatError

__all__ = ["Series", "line_chart", "write_svg"]

WIDTH, HEIGHT = 800, 600
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 80, 200, 50, 60
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
           "#bcbd22", "#17becf")
DASHES = ("", "6,4", "2,3", "8,3,2,3")


@dataclass(frozen=True)
class Series:
    label: str
    x: np.ndarray
    y: np.ndarray
    dashed: bool = False


def _nice_step(span: float, target: int = 6) -> float:
    raw = span / target
    mag = 10 ** math.floor(math.log10(raw))
    for m in (1, 2, 2.5, 5, 10):
        if m * mag >= raw:
            return m * mag
    return 10 * mag


def _linear_ticks(lo: float, hi: float) -> list[float]:
    step = _nice_step(hi - lo)
    start = math.ceil(lo / step - 1e-9) * step
    ticks = []
    v = start
    while v <= hi + 1e-9 * step:
        ticks.append(0.0 if abs(v) < step * 1e-9 else v)
        v += step
    return ticks


def _fmt_tick(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-3:
        return f"{v:.0e}"
    return f"{v:.6g}"


def _range(vals: np.ndarray) -> tuple[float, float]:
    lo, hi = float(vals.min()), float(vals.max())
    if lo == hi:
        pad = abs(lo) * 0.05 if lo != 0 else 1.0
        lo, hi = lo - pad, hi + pad
    return lo, hi


def line_chart(series: Sequence[Series], title: str = "", xlabel: str = "", ylabel: str = "",
               log_y: bool = False) -> str:
    """Render series as polylines; non-finite points (and nonpositive ones on a log axis) break the line."""
    if not series:
        raise FormatError("nothing to plot")
    xs, ys = [], []
    for s in series:
        x, y = np.asarray(s.x, float), np.asarray(s.y, float)
        if x.shape != y.shape:
            raise FormatError(f"series {s.label!r}: x and y lengths differ")
        ok = np.isfinite(x) & np.isfinite(y) & ((y > 0) if log_y else True)
        xs.append(x[ok])
        ys.append(np.log10(y[ok]) if log_y else y[ok])
    allx = np.concatenate(xs) if xs else np.array([])
    ally = np.concatenate(ys) if ys else np.array([])
    if allx.size == 0:
        raise FormatError("no finite points to plot")
    x0, x1 = _range(allx)
    y0, y1 = _range(ally)
    if log_y:
        y0, y1 = math.floor(y0), math.ceil(y1)
        if y0 == y1:
            y1 = y0 + 1
    pw, ph = WIDTH - MARGIN_L - MARGIN_R, HEIGHT - MARGIN_T - MARGIN_B

    def px(v):
        return MARGIN_L + (v - x0) / (x1 - x0) * pw

    def py(v):
        return MARGIN_T + ph - (v - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>',
        f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="#000000"/>',
    ]
    for v in _linear_ticks(x0, x1):
        X = px(v)
        out.append(f'<line x1="{X:.2f}" y1="{MARGIN_T + ph}" x2="{X:.2f}" y2="{MARGIN_T + ph + 5}" stroke="#000000"/>')
        out.append(f'<text x="{X:.2f}" y="{MARGIN_T + ph + 20}" text-anchor="middle">{escape(_fmt_tick(v))}</text>')
    yt = list(range(int(y0), int(y1) + 1)) if log_y else _linear_ticks(y0, y1)
    for v in yt:
        Y = py(v)
        label = f"1e{int(v)}" if log_y else _fmt_tick(v)
        out.append(f'<line x1="{MARGIN_L - 5}" y1="{Y:.2f}" x2="{MARGIN_L + pw}" y2="{Y:.2f}" stroke="#dddddd"/>')
        out.append(f'<text x="{MARGIN_L - 8}" y="{Y + 4:.2f}" text-anchor="end">{escape(label)}</text>')
    if title:
        out.append(f'<text x="{MARGIN_L + pw / 2:.2f}" y="30" text-anchor="middle" font-size="16">{escape(title)}</text>')
    if xlabel:
        out.append(f'<text x="{MARGIN_L + pw / 2:.2f}" y="{HEIGHT - 15}" text-anchor="middle">{escape(xlabel)}</text>')
    if ylabel:
        yl = ylabel + (" (log scale)" if log_y else "")
        out.append(f'<text x="20" y="{MARGIN_T + ph / 2:.2f}" text-anchor="middle" '
                   f'transform="rotate(-90 20 {MARGIN_T + ph / 2:.2f})">{escape(yl)}</text>')
    for k, s in enumerate(series):
        color = PALETTE[k % len(PALETTE)]
        dash = "6,4" if s.dashed else DASHES[(k // len(PALETTE)) % len(DASHES)]
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        x, y = np.asarray(s.x, float), np.asarray(s.y, float)
        ok = np.isfinite(x) & np.isfinite(y) & ((y > 0) if log_y else True)
        yv = np.where(ok, np.log10(np.where(ok, y, 1.0)) if log_y else y, np.nan)
        # Split into runs of consecutive plottable points.
        runs, cur = [], []
        for xi, yi, good in zip(x, yv, ok):
            if good:
                cur.append(f"{px(xi):.2f},{py(yi):.2f}")
            elif cur:
                runs.append(cur)
                cur = []
        if cur:
            runs.append(cur)
        for run in runs:
            if len(run) == 1:
                cx, cy = run[0].split(",")
                out.append(f'<circle cx="{cx}" cy="{cy}" r="2" fill="{color}"/>')
            else:
                out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash_attr} '
                           f'points="{" ".join(run)}"/>')
        ly = MARGIN_T + 10 + 18 * k
        lx = MARGIN_L + pw + 15
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 25}" y2="{ly}" stroke="{color}" stroke-width="2"{dash_attr}/>')
        out.append(f'<text x="{lx + 30}" y="{ly + 4}">{escape(s.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(path, svg: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(svg.encode("utf-8"))
    return path
