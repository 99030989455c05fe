"""Static SVG charts (bar charts and line overlays), no plotting dependency."""

from __future__ import annotations

from html import escape
from typing import Sequence

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd")


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def _frame(width: int, height: int, title: str, body: list[str]) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">'
    )
    return "\n".join(
        [head, f'<rect width="{width}" height="{height}" fill="white"/>',
         f'<text x="{width / 2}" y="16" text-anchor="middle" font-size="13">{escape(title)}</text>',
         *body, "</svg>", ""]
    )


def bar_chart(labels: Sequence[str], values: Sequence[float], title: str = "", ylabel: str = "",
              width: int = 480, height: int = 300) -> str:
    left, right, top, bottom = 56, 12, 28, 40
    pw, ph = width - left - right, height - top - bottom
    vmax = max([abs(v) for v in values] + [1e-12])
    n = max(len(values), 1)
    slot = pw / n
    body = [
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
        f'<text x="14" y="{top + ph / 2}" transform="rotate(-90 14 {top + ph / 2})" '
        f'text-anchor="middle">{escape(ylabel)}</text>',
        f'<text x="{left - 4}" y="{top + 4}" text-anchor="end">{vmax:.4g}</text>',
    ]
    for k, (label, v) in enumerate(zip(labels, values)):
        h = ph * max(v, 0.0) / vmax
        x = left + k * slot + slot * 0.15
        body.append(
            f'<rect x="{_fmt(x)}" y="{_fmt(top + ph - h)}" width="{_fmt(slot * 0.7)}" '
            f'height="{_fmt(h)}" fill="{_PALETTE[0]}"/>'
        )
        cx = _fmt(left + (k + 0.5) * slot)
        body.append(f'<text x="{cx}" y="{top + ph + 14}" text-anchor="middle">{escape(str(label))}</text>')
        body.append(f'<text x="{cx}" y="{_fmt(top + ph - h - 3)}" text-anchor="middle">{v:.3g}</text>')
    return _frame(width, height, title, body)


def line_chart(series: dict[str, Sequence[float]], title: str = "", ylabel: str = "",
               width: int = 900, height: int = 300) -> str:
    left, right, top, bottom = 60, 110, 28, 30
    pw, ph = width - left - right, height - top - bottom
    allv = [v for s in series.values() for v in s]
    lo, hi = (min(allv), max(allv)) if allv else (0.0, 1.0)
    if hi == lo:
        hi = lo + 1.0
    body = [
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
        f'<text x="{left - 4}" y="{top + 4}" text-anchor="end">{hi:.4g}</text>',
        f'<text x="{left - 4}" y="{top + ph}" text-anchor="end">{lo:.4g}</text>',
        f'<text x="14" y="{top + ph / 2}" transform="rotate(-90 14 {top + ph / 2})" '
        f'text-anchor="middle">{escape(ylabel)}</text>',
    ]
    for k, (name, values) in enumerate(series.items()):
        n = len(values)
        if n == 0:
            continue
        step = pw / max(n - 1, 1)
        pts = " ".join(
            f"{_fmt(left + j * step)},{_fmt(top + ph * (1 - (v - lo) / (hi - lo)))}" for j, v in enumerate(values)
        )
        color = _PALETTE[k % len(_PALETTE)]
        body.append(f'<polyline fill="none" stroke="{color}" stroke-width="1" points="{pts}"/>')
        body.append(f'<text x="{left + pw + 8}" y="{top + 14 * (k + 1)}" fill="{color}">{escape(name)}</text>')
    return _frame(width, height, title, body)
