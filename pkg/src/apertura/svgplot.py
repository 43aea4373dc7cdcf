"""Minimal deterministic SVG output: line-plot panels and image contact sheets.

Hand-rolled on purpose: output bytes depend only on the data, so plot files
can be diffed and checked for reproducibility.
"""

from __future__ import annotations

import base64
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .formats import atomic_write_text

__all__ = ["Series", "Panel", "write_line_panels", "write_contact_sheet"]

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
            "#8c564b", "#17becf", "#7f7f7f")

_PANEL_W = 380
_PANEL_H = 300
_MARGIN_L = 62
_MARGIN_R = 16
_MARGIN_T = 34
_MARGIN_B = 46


@dataclass
class Series:
    label: str
    xs: list
    ys: list


@dataclass
class Panel:
    title: str
    xlabel: str
    ylabel: str
    series: list = field(default_factory=list)
    logy: bool = False


def _nice_ticks(lo: float, hi: float, target: int = 5):
    """Round tick positions at 1/2/5 steps covering [lo, hi]."""
    if not math.isfinite(lo) or not math.isfinite(hi) or hi <= lo:
        return [lo, hi]
    span = hi - lo
    raw = span / max(target - 1, 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 5.0, 10.0):
        if raw <= mult * mag:
            step = mult * mag
            break
    first = math.ceil(lo / step) * step
    ticks = []
    t = first
    while t <= hi + step * 1e-9:
        ticks.append(0.0 if abs(t) < step * 1e-9 else t)
        t += step
    return ticks or [lo, hi]


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def _panel_svg(panel: Panel, x_off: int, parts: list) -> None:
    pts = [(x, y) for s in panel.series for x, y in zip(s.xs, s.ys)
           if math.isfinite(x) and math.isfinite(y)]
    if not pts:
        parts.append(f'<text x="{x_off + _PANEL_W / 2}" y="{_PANEL_H / 2}" '
                     f'text-anchor="middle" class="lbl">no data</text>')
        return
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if panel.logy:
        y_lo = math.log10(max(y_lo, 1e-30))
        y_hi = math.log10(max(y_hi, 1e-30))
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    pad_y = 0.06 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad_y, y_hi + pad_y

    plot_x0 = x_off + _MARGIN_L
    plot_x1 = x_off + _PANEL_W - _MARGIN_R
    plot_y0 = _MARGIN_T
    plot_y1 = _PANEL_H - _MARGIN_B

    def sx(x):
        return plot_x0 + (x - x_lo) / (x_hi - x_lo) * (plot_x1 - plot_x0)

    def sy(y):
        if panel.logy:
            y = math.log10(max(y, 1e-30))
        return plot_y1 - (y - y_lo) / (y_hi - y_lo) * (plot_y1 - plot_y0)

    parts.append(f'<rect x="{plot_x0:.2f}" y="{plot_y0:.2f}" '
                 f'width="{plot_x1 - plot_x0:.2f}" height="{plot_y1 - plot_y0:.2f}" '
                 f'fill="none" stroke="#444" stroke-width="1"/>')
    parts.append(f'<text x="{(plot_x0 + plot_x1) / 2:.2f}" y="{_MARGIN_T - 12}" '
                 f'text-anchor="middle" class="title">{panel.title}</text>')

    for t in _nice_ticks(x_lo, x_hi):
        px = sx(t)
        parts.append(f'<line x1="{px:.2f}" y1="{plot_y1:.2f}" x2="{px:.2f}" '
                     f'y2="{plot_y1 + 4:.2f}" stroke="#444"/>')
        parts.append(f'<text x="{px:.2f}" y="{plot_y1 + 17:.2f}" '
                     f'text-anchor="middle" class="lbl">{_fmt(t)}</text>')
    y_ticks = _nice_ticks(y_lo, y_hi)
    for t in y_ticks:
        py = plot_y1 - (t - y_lo) / (y_hi - y_lo) * (plot_y1 - plot_y0)
        label = 10.0 ** t if panel.logy else t
        parts.append(f'<line x1="{plot_x0 - 4:.2f}" y1="{py:.2f}" x2="{plot_x0:.2f}" '
                     f'y2="{py:.2f}" stroke="#444"/>')
        parts.append(f'<line x1="{plot_x0:.2f}" y1="{py:.2f}" x2="{plot_x1:.2f}" '
                     f'y2="{py:.2f}" stroke="#ddd" stroke-width="0.5"/>')
        parts.append(f'<text x="{plot_x0 - 7:.2f}" y="{py + 3:.2f}" '
                     f'text-anchor="end" class="lbl">{_fmt(label)}</text>')

    parts.append(f'<text x="{(plot_x0 + plot_x1) / 2:.2f}" y="{_PANEL_H - 10}" '
                 f'text-anchor="middle" class="axis">{panel.xlabel}</text>')
    parts.append(f'<text x="{x_off + 14}" y="{(plot_y0 + plot_y1) / 2:.2f}" '
                 f'text-anchor="middle" class="axis" '
                 f'transform="rotate(-90 {x_off + 14} {(plot_y0 + plot_y1) / 2:.2f})">'
                 f'{panel.ylabel}</text>')

    for i, s in enumerate(panel.series):
        color = _PALETTE[i % len(_PALETTE)]
        chunk = []
        for x, y in zip(s.xs, s.ys):
            if math.isfinite(x) and math.isfinite(y):
                chunk.append(f"{sx(x):.2f},{sy(y):.2f}")
            elif chunk:
                parts.append(f'<polyline points="{" ".join(chunk)}" fill="none" '
                             f'stroke="{color}" stroke-width="1.5"/>')
                chunk = []
        if chunk:
            parts.append(f'<polyline points="{" ".join(chunk)}" fill="none" '
                         f'stroke="{color}" stroke-width="1.5"/>')
        ly = plot_y0 + 14 + 13 * i
        parts.append(f'<line x1="{plot_x1 - 86:.2f}" y1="{ly - 3:.2f}" '
                     f'x2="{plot_x1 - 72:.2f}" y2="{ly - 3:.2f}" '
                     f'stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{plot_x1 - 68:.2f}" y="{ly:.2f}" class="lbl">'
                     f'{s.label}</text>')


def write_line_panels(panels, path) -> None:
    """Render panels side by side into one SVG file."""
    panels = list(panels)
    total_w = _PANEL_W * len(panels)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{total_w}" '
        f'height="{_PANEL_H}" viewBox="0 0 {total_w} {_PANEL_H}">',
        '<style>text{font-family:sans-serif}.title{font-size:13px}'
        '.axis{font-size:11px}.lbl{font-size:9px}</style>',
        f'<rect width="{total_w}" height="{_PANEL_H}" fill="white"/>',
    ]
    for i, panel in enumerate(panels):
        _panel_svg(panel, i * _PANEL_W, parts)
    parts.append("</svg>")
    atomic_write_text(path, "\n".join(parts) + "\n")


def _png_data_uri(img: np.ndarray) -> str:
    from PIL import Image

    arr = np.asarray(img, dtype=np.float64)
    vmax = arr.max()
    arr8 = np.zeros(arr.shape, dtype=np.uint8) if vmax <= 0 else \
        np.clip(np.round(arr / vmax * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr8, mode="L").save(buf, format="PNG")
    return "data:image/png;base64," + base64.b64encode(buf.getvalue()).decode("ascii")


def write_contact_sheet(entries, path, cell_px: int = 120,
                        columns: int | None = None,
                        title: str = "") -> None:
    """Grid of labeled grayscale images (each normalized to its own peak)."""
    entries = list(entries)
    n = len(entries)
    if columns is None:
        columns = max(1, math.ceil(math.sqrt(n)))
    rows = math.ceil(n / columns)
    pad, label_h, top = 10, 16, 26 if title else 6
    w = columns * (cell_px + pad) + pad
    h = top + rows * (cell_px + label_h + pad) + pad
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
        f'viewBox="0 0 {w} {h}">',
        '<style>text{font-family:sans-serif;font-size:10px}'
        '.t{font-size:13px}</style>',
        f'<rect width="{w}" height="{h}" fill="white"/>',
    ]
    if title:
        parts.append(f'<text x="{w / 2}" y="17" text-anchor="middle" class="t">{title}</text>')
    for i, (label, img) in enumerate(entries):
        cx = pad + (i % columns) * (cell_px + pad)
        cy = top + (i // columns) * (cell_px + label_h + pad)
        parts.append(f'<image x="{cx}" y="{cy}" width="{cell_px}" height="{cell_px}" '
                     f'image-rendering="pixelated" href="{_png_data_uri(img)}"/>')
        parts.append(f'<rect x="{cx}" y="{cy}" width="{cell_px}" height="{cell_px}" '
                     f'fill="none" stroke="#999" stroke-width="0.5"/>')
        parts.append(f'<text x="{cx + cell_px / 2}" y="{cy + cell_px + 12}" '
                     f'text-anchor="middle">{label}</text>')
    parts.append("</svg>")
    atomic_write_text(path, "\n".join(parts) + "\n")
