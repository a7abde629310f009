"""Self-contained SVG scatter of log_actual against log_bound."""

from __future__ import annotations

import math
from pathlib import Path

from .io_utils import write_text_atomic
from .report import SuiteReport, read_report

WIDTH = 480
HEIGHT = 480
MARGIN = 48


def _fmt(value: float) -> str:
    return f"{value:.3f}"


def _points(report: SuiteReport) -> list[tuple[float, float]]:
    points = []
    for record in report.records:
        bound = record.log_bounds.get(report.primary)
        actual = record.log_actuals.get(report.primary)
        if bound is None or actual is None:
            continue
        if math.isfinite(bound) and math.isfinite(actual):
            points.append((bound, actual))
    return points


def render_svg(report: SuiteReport) -> str:
    """Points below the diagonal satisfy their bound; the diagonal is ``y = x``."""
    inner_w = WIDTH - 2 * MARGIN
    inner_h = HEIGHT - 2 * MARGIN
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f"<title>{report.suite}: {report.primary}</title>",
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" '
        f'y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<text x="{WIDTH // 2}" y="{HEIGHT - 12}" text-anchor="middle" font-size="12">'
        "log bound</text>",
        f'<text x="14" y="{HEIGHT // 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {HEIGHT // 2})">log actual</text>',
    ]

    points = _points(report)
    if points:
        values = [v for point in points for v in point]
        low, high = min(values), max(values)
        if high - low < 1e-9:
            low, high = low - 1.0, high + 1.0
        span = high - low

        def sx(value: float) -> float:
            return MARGIN + (value - low) / span * inner_w

        def sy(value: float) -> float:
            return HEIGHT - MARGIN - (value - low) / span * inner_h

        lines.append(
            f'<line x1="{_fmt(sx(low))}" y1="{_fmt(sy(low))}" x2="{_fmt(sx(high))}" '
            f'y2="{_fmt(sy(high))}" stroke="gray" stroke-dasharray="4 4"/>'
        )
        lines.append(
            f'<text x="{MARGIN}" y="{HEIGHT - MARGIN + 16}" font-size="10">{_fmt(low)}</text>'
        )
        lines.append(
            f'<text x="{WIDTH - MARGIN}" y="{HEIGHT - MARGIN + 16}" text-anchor="end" '
            f'font-size="10">{_fmt(high)}</text>'
        )
        for bound, actual in points:
            colour = "steelblue" if actual <= bound else "crimson"
            lines.append(
                f'<circle cx="{_fmt(sx(bound))}" cy="{_fmt(sy(actual))}" r="2" fill="{colour}"/>'
            )
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def emit_plot(report_path: Path, out_path: Path) -> None:
    write_text_atomic(out_path, render_svg(read_report(report_path)))
