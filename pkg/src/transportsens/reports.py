"""Deterministic report writers: JSON, CSV tables, and the contour SVG.

Reports embed the run configuration and package version so any output can be
regenerated from the file alone. JSON is serialized with sorted keys and
shortest-roundtrip floats, so identical inputs give byte-identical files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from transportsens.bootstrap import AdjustedGrid
from transportsens.sensitivity import BenchmarkRow, ContourGrid


def write_json(payload: dict, path: str | Path) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True, allow_nan=True)
    Path(path).write_text(text + "\n", encoding="utf-8")


def write_contour_csv(
    grid: ContourGrid,
    path: str | Path,
    adjusted: AdjustedGrid | None = None,
) -> None:
    """One row per grid cell; bootstrap CI columns merge in when available."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["r2", "rho", "bias", "adjusted"]
        if adjusted is not None:
            header += ["ci_lower", "ci_upper", "covers_zero"]
        writer.writerow(header)
        for i, r2 in enumerate(grid.r2_axis):
            for j, rho in enumerate(grid.rho_axis):
                bias = grid.bias_surface[i, j]
                row = [
                    f"{r2:.6g}",
                    f"{rho:.6g}",
                    repr(float(bias)),
                    repr(float(grid.tau_hat - bias)),
                ]
                if adjusted is not None:
                    row += [
                        repr(float(adjusted.ci_lower[i, j])),
                        repr(float(adjusted.ci_upper[i, j])),
                        int(adjusted.covers_zero[i, j]),
                    ]
                writer.writerow(row)


def write_benchmark_csv(rows: list[BenchmarkRow], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["modifier", "r2_minus_j", "rho_minus_j", "bias_est", "mrems", "mrems_alpha"]
        )
        for row in rows:
            writer.writerow(
                [
                    row.modifier,
                    repr(float(row.r2_minus_j)),
                    repr(float(row.rho_minus_j)),
                    repr(float(row.bias_est)),
                    repr(float(row.mrems)),
                    "" if row.mrems_alpha is None else repr(float(row.mrems_alpha)),
                ]
            )


def benchmark_rows_payload(rows: list[BenchmarkRow]) -> list[dict]:
    return [
        {
            "modifier": r.modifier,
            "r2_minus_j": r.r2_minus_j,
            "rho_minus_j": r.rho_minus_j,
            "bias_est": r.bias_est,
            "mrems": r.mrems if np.isfinite(r.mrems) else None,
            "mrems_alpha": r.mrems_alpha,
            "informative": r.informative,
        }
        for r in rows
    ]


# -- SVG contour figure --------------------------------------------------------

_W, _H = 640, 480
_ML, _MR, _MT, _MB = 70, 20, 40, 55


def _x_pix(r2: float) -> float:
    return _ML + r2 * (_W - _ML - _MR)


def _y_pix(rho: float) -> float:
    return _MT + (1.0 - rho) / 2.0 * (_H - _MT - _MB)


def _polyline(points: np.ndarray, style: str) -> str:
    coords = " ".join(f"{_x_pix(r2):.2f},{_y_pix(rho):.2f}" for r2, rho in points)
    return f'<polyline fill="none" {style} points="{coords}"/>'


def render_contour_svg(grid: ContourGrid, path: str | Path, title: str = "") -> None:
    """Static figure of the zero-bias curve and the significance border."""
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
    ]
    if title:
        parts.append(
            f'<text x="{_W / 2:.0f}" y="24" text-anchor="middle" '
            f'font-family="sans-serif" font-size="15">{title}</text>'
        )
    # axes box and ticks
    x0, x1 = _x_pix(0.0), _x_pix(1.0)
    y0, y1 = _y_pix(-1.0), _y_pix(1.0)
    parts.append(
        f'<rect x="{x0:.2f}" y="{y1:.2f}" width="{x1 - x0:.2f}" '
        f'height="{y0 - y1:.2f}" fill="none" stroke="black"/>'
    )
    for t in np.arange(0.0, 1.01, 0.2):
        xp = _x_pix(t)
        parts.append(f'<line x1="{xp:.2f}" y1="{y0:.2f}" x2="{xp:.2f}" y2="{y0 + 5:.2f}" stroke="black"/>')
        parts.append(
            f'<text x="{xp:.2f}" y="{y0 + 20:.2f}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="12">{t:.1f}</text>'
        )
    for t in np.arange(-1.0, 1.01, 0.5):
        yp = _y_pix(t)
        parts.append(f'<line x1="{x0 - 5:.2f}" y1="{yp:.2f}" x2="{x0:.2f}" y2="{yp:.2f}" stroke="black"/>')
        parts.append(
            f'<text x="{x0 - 10:.2f}" y="{yp + 4:.2f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="12">{t:.1f}</text>'
        )
    parts.append(
        f'<text x="{(x0 + x1) / 2:.0f}" y="{_H - 12}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="13">'
        "residual imbalance share (R&#178;)</text>"
    )
    parts.append(
        f'<text x="18" y="{(y0 + y1) / 2:.0f}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="13" '
        f'transform="rotate(-90 18 {(y0 + y1) / 2:.0f})">'
        "correlation with unit effect (&#961;)</text>"
    )
    if grid.kill_curve.shape[0] > 0:
        parts.append(
            _polyline(grid.kill_curve, 'stroke="#1f4fd8" stroke-width="2"')
        )
        parts.append(
            f'<text x="{x1 - 8:.0f}" y="{y1 + 18:.0f}" text-anchor="end" fill="#1f4fd8" '
            f'font-family="sans-serif" font-size="12">adjusted estimate = 0</text>'
        )
    if grid.significance_border is not None and grid.significance_border.shape[0] > 0:
        parts.append(
            _polyline(
                grid.significance_border,
                'stroke="#d83a3a" stroke-width="2" stroke-dasharray="6 4"',
            )
        )
        parts.append(
            f'<text x="{x1 - 8:.0f}" y="{y1 + 34:.0f}" text-anchor="end" fill="#d83a3a" '
            f'font-family="sans-serif" font-size="12">CI first covers 0</text>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")
