"""True-vs-predicted speed curves as SVG files with CSV twins.

SVGs are written by hand so identical inputs always produce identical
bytes; no GUI toolkit is involved.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

_WIDTH, _HEIGHT = 640, 320
_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 52, 16, 34, 36
_TRUE_COLOR = "#1f77b4"
_PRED_COLOR = "#d62728"


def _polyline(xs: Sequence[float], ys: Sequence[float], color: str) -> str:
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
    return (f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
            f'points="{pts}"/>')


def speed_curve_svg(trip_id: str, true_speeds: Sequence[float],
                    pred_speeds: Sequence[float]) -> str:
    n = len(true_speeds)
    lo = min(min(true_speeds), min(pred_speeds), 0.0)
    hi = max(max(true_speeds), max(pred_speeds), 1.0)
    span = hi - lo or 1.0
    plot_w = _WIDTH - _MARGIN_L - _MARGIN_R
    plot_h = _HEIGHT - _MARGIN_T - _MARGIN_B

    def sx(i: int) -> float:
        return _MARGIN_L + (plot_w * i / max(n - 1, 1))

    def sy(v: float) -> float:
        return _MARGIN_T + plot_h * (1.0 - (v - lo) / span)

    xs = [sx(i) for i in range(n)]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" '
        f'height="{_HEIGHT}" viewBox="0 0 {_WIDTH} {_HEIGHT}">',
        f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
        f'<text x="{_MARGIN_L}" y="20" font-family="sans-serif" '
        f'font-size="13">trip {trip_id}: true vs predicted speed (km/h)</text>',
        f'<line x1="{_MARGIN_L}" y1="{_MARGIN_T}" x2="{_MARGIN_L}" '
        f'y2="{_HEIGHT - _MARGIN_B}" stroke="black"/>',
        f'<line x1="{_MARGIN_L}" y1="{_HEIGHT - _MARGIN_B}" '
        f'x2="{_WIDTH - _MARGIN_R}" y2="{_HEIGHT - _MARGIN_B}" stroke="black"/>',
        f'<text x="6" y="{sy(hi):.2f}" font-family="sans-serif" '
        f'font-size="11">{hi:.0f}</text>',
        f'<text x="6" y="{sy(lo):.2f}" font-family="sans-serif" '
        f'font-size="11">{lo:.0f}</text>',
        f'<text x="{_MARGIN_L}" y="{_HEIGHT - 12}" font-family="sans-serif" '
        f'font-size="11">step 0</text>',
        f'<text x="{_WIDTH - _MARGIN_R - 50}" y="{_HEIGHT - 12}" '
        f'font-family="sans-serif" font-size="11">step {n - 1}</text>',
        _polyline(xs, [sy(v) for v in true_speeds], _TRUE_COLOR),
        _polyline(xs, [sy(v) for v in pred_speeds], _PRED_COLOR),
        f'<text x="{_WIDTH - 170}" y="20" font-family="sans-serif" '
        f'font-size="11" fill="{_TRUE_COLOR}">true</text>',
        f'<text x="{_WIDTH - 130}" y="20" font-family="sans-serif" '
        f'font-size="11" fill="{_PRED_COLOR}">predicted</text>',
        "</svg>",
    ]
    return "\n".join(parts) + "\n"


def write_trip_plot(out_dir: str | Path, trip_id: str,
                    true_speeds: Sequence[float],
                    pred_speeds: Sequence[float]) -> tuple[Path, Path]:
    """Write trip_<id>.svg and trip_<id>.csv; returns both paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    svg_path = out_dir / f"trip_{trip_id}.svg"
    csv_path = out_dir / f"trip_{trip_id}.csv"
    svg_path.write_text(speed_curve_svg(trip_id, true_speeds, pred_speeds),
                        encoding="utf-8")
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["step_index", "true_speed_kmh", "pred_speed_kmh"])
        for i, (t, p) in enumerate(zip(true_speeds, pred_speeds)):
            w.writerow([i, repr(float(t)), repr(float(p))])
    return svg_path, csv_path
