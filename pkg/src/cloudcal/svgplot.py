"""Self-contained deterministic SVG line charts for training histories.

One chart is a vertical stack of panels; each panel draws one series as a
single polyline with axis lines and min/max tick labels.  Identical input
always renders identical bytes, so charts can be diffed in tests and
across reruns.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .errors import DatasetError

PANEL_WIDTH = 640
PANEL_HEIGHT = 180
MARGIN_LEFT = 70
MARGIN_RIGHT = 20
MARGIN_TOP = 30
MARGIN_BOTTOM = 35


@dataclass(frozen=True)
class Series:
    label: str
    xs: tuple[float, ...]
    ys: tuple[float, ...]
    color: str


def _span(values: Sequence[float]) -> tuple[float, float]:
    lo, hi = min(values), max(values)
    if hi - lo < 1e-12:
        pad = 1.0 if hi == 0 else abs(hi) * 0.05 + 1e-9
        return lo - pad, hi + pad
    return lo, hi


def _panel(series: Series, offset_y: int) -> list[str]:
    x0 = MARGIN_LEFT
    x1 = PANEL_WIDTH - MARGIN_RIGHT
    y0 = offset_y + MARGIN_TOP
    y1 = offset_y + PANEL_HEIGHT - MARGIN_BOTTOM
    xmin, xmax = _span(series.xs)
    ymin, ymax = _span(series.ys)

    def px(x: float) -> float:
        return x0 + (x - xmin) / (xmax - xmin) * (x1 - x0)

    def py(y: float) -> float:
        return y1 - (y - ymin) / (ymax - ymin) * (y1 - y0)

    points = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(series.xs, series.ys))
    return [
        f'<text x="{x0}" y="{offset_y + 18}" font-size="13" font-family="monospace">{series.label}</text>',
        f'<line x1="{x0}" y1="{y1}" x2="{x1}" y2="{y1}" stroke="#444" stroke-width="1"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="#444" stroke-width="1"/>',
        f'<text x="{x0 - 6}" y="{y1 + 4}" font-size="10" font-family="monospace" text-anchor="end">{min(series.ys):.4g}</text>',
        f'<text x="{x0 - 6}" y="{y0 + 4}" font-size="10" font-family="monospace" text-anchor="end">{max(series.ys):.4g}</text>',
        f'<text x="{x0}" y="{y1 + 16}" font-size="10" font-family="monospace">{min(series.xs):.6g}</text>',
        f'<text x="{x1}" y="{y1 + 16}" font-size="10" font-family="monospace" text-anchor="end">{max(series.xs):.6g}</text>',
        f'<polyline fill="none" stroke="{series.color}" stroke-width="1.5" points="{points}"/>',
    ]


def render_chart(all_series: Sequence[Series]) -> str:
    """Render the series as stacked panels, one polyline each."""
    if not all_series:
        raise DatasetError("no series to plot")
    for series in all_series:
        if not series.xs or len(series.xs) != len(series.ys):
            raise DatasetError(f"series {series.label!r} is empty or mismatched")
    height = PANEL_HEIGHT * len(all_series)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{PANEL_WIDTH}" height="{height}" '
        f'viewBox="0 0 {PANEL_WIDTH} {height}">',
        f'<rect width="{PANEL_WIDTH}" height="{height}" fill="white"/>',
    ]
    for i, series in enumerate(all_series):
        parts.extend(_panel(series, i * PANEL_HEIGHT))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
