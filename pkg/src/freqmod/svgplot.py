"""Minimal native SVG line plots.

CSV is the canonical experiment output; these plots are a convenience for
eyeballing trends without pulling in a plotting stack. Only what the
harness needs is implemented: multi-series line charts with optional
log-scaled y axis, axis ticks, and a legend.
"""

from __future__ import annotations

import math

from .errors import InvalidInputError

PALETTE = (
    "#1f77b4",
    "#d62728",
    "#2ca02c",
    "#9467bd",
    "#ff7f0e",
    "#8c564b",
    "#17becf",
    "#7f7f7f",
)

_MARGIN_LEFT = 72
_MARGIN_RIGHT = 24
_MARGIN_TOP = 44
_MARGIN_BOTTOM = 56


def _fmt(value: float) -> str:
    return f"{value:.6g}"


def _ticks(lo: float, hi: float, count: int = 5) -> list:
    if count < 2:
        return [lo]
    step = (hi - lo) / (count - 1)
    return [lo + i * step for i in range(count)]


def line_plot(
    series,
    title: str,
    x_label: str,
    y_label: str,
    width: int = 720,
    height: int = 480,
    y_log: bool = False,
    markers: bool = False,
) -> str:
    """Render labelled (xs, ys) series to an SVG document string.

    series: sequence of (label, xs, ys) with equal-length coordinate lists.
    Non-finite points (and non-positive y when y_log) are dropped per series.
    """
    cleaned = []
    for label, xs, ys in series:
        if len(xs) != len(ys):
            raise InvalidInputError(
                f"series {label!r} has {len(xs)} x values but {len(ys)} y values"
            )
        points = []
        for x, y in zip(xs, ys):
            x, y = float(x), float(y)
            if not (math.isfinite(x) and math.isfinite(y)):
                continue
            if y_log:
                if y <= 0.0:
                    continue
                y = math.log10(y)
            points.append((x, y))
        if points:
            cleaned.append((str(label), points))
    if not cleaned:
        raise InvalidInputError("no finite data points to plot")

    all_x = [p[0] for _, pts in cleaned for p in pts]
    all_y = [p[1] for _, pts in cleaned for p in pts]
    x_lo, x_hi = min(all_x), max(all_x)
    y_lo, y_hi = min(all_y), max(all_y)
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 1.0, x_hi + 1.0
    if y_hi == y_lo:
        pad = abs(y_lo) * 0.1 or 1.0
        y_lo, y_hi = y_lo - pad, y_hi + pad

    plot_w = width - _MARGIN_LEFT - _MARGIN_RIGHT
    plot_h = height - _MARGIN_TOP - _MARGIN_BOTTOM

    def px(x: float) -> float:
        return _MARGIN_LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w

    def py(y: float) -> float:
        return _MARGIN_TOP + (y_hi - y) / (y_hi - y_lo) * plot_h

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" '
        f'font-family="sans-serif" font-size="16">{_escape(title)}</text>',
    ]

    axis_color = "#333333"
    out.append(
        f'<line x1="{_MARGIN_LEFT}" y1="{_MARGIN_TOP}" x2="{_MARGIN_LEFT}" '
        f'y2="{_MARGIN_TOP + plot_h}" stroke="{axis_color}"/>'
    )
    out.append(
        f'<line x1="{_MARGIN_LEFT}" y1="{_MARGIN_TOP + plot_h}" '
        f'x2="{_MARGIN_LEFT + plot_w}" y2="{_MARGIN_TOP + plot_h}" '
        f'stroke="{axis_color}"/>'
    )

    for tick in _ticks(x_lo, x_hi):
        x = px(tick)
        y0 = _MARGIN_TOP + plot_h
        out.append(
            f'<line x1="{x:.2f}" y1="{y0}" x2="{x:.2f}" y2="{y0 + 5}" '
            f'stroke="{axis_color}"/>'
        )
        out.append(
            f'<text x="{x:.2f}" y="{y0 + 20}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{_fmt(tick)}</text>'
        )
    for tick in _ticks(y_lo, y_hi):
        y = py(tick)
        label = f"1e{tick:.2f}" if y_log else _fmt(tick)
        out.append(
            f'<line x1="{_MARGIN_LEFT - 5}" y1="{y:.2f}" x2="{_MARGIN_LEFT}" '
            f'y2="{y:.2f}" stroke="{axis_color}"/>'
        )
        out.append(
            f'<text x="{_MARGIN_LEFT - 8}" y="{y + 4:.2f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{label}</text>'
        )

    out.append(
        f'<text x="{_MARGIN_LEFT + plot_w / 2:.1f}" y="{height - 12}" '
        f'text-anchor="middle" font-family="sans-serif" font-size="13">'
        f"{_escape(x_label)}</text>"
    )
    y_axis_label = f"log10 {y_label}" if y_log else y_label
    out.append(
        f'<text x="18" y="{_MARGIN_TOP + plot_h / 2:.1f}" '
        f'text-anchor="middle" font-family="sans-serif" font-size="13" '
        f'transform="rotate(-90 18 {_MARGIN_TOP + plot_h / 2:.1f})">'
        f"{_escape(y_axis_label)}</text>"
    )

    for i, (label, points) in enumerate(cleaned):
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in points)
        out.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}" '
            f'stroke-width="1.8"/>'
        )
        if markers:
            for x, y in points:
                out.append(
                    f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="2.6" '
                    f'fill="{color}"/>'
                )
        legend_y = _MARGIN_TOP + 14 + i * 18
        legend_x = _MARGIN_LEFT + plot_w - 150
        out.append(
            f'<line x1="{legend_x}" y1="{legend_y - 4}" x2="{legend_x + 22}" '
            f'y2="{legend_y - 4}" stroke="{color}" stroke-width="2"/>'
        )
        out.append(
            f'<text x="{legend_x + 28}" y="{legend_y}" '
            f'font-family="sans-serif" font-size="12">{_escape(label)}</text>'
        )

    out.append("</svg>")
    return "\n".join(out) + "\n"


def _escape(text: str) -> str:
    return (
        text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
    )
