"""Run artifacts: CSV trajectory logs, metric summaries, SVG plots.

All emitters are deterministic: fixed column order, fixed float
formatting, LF line endings, no timestamps or environment-dependent
content, so repeated runs of the same scenario produce byte-identical
files.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .scenario import RunMetrics, TrajectoryLog

# Column order: time_s, platform_tilt_deg, then per link n = 1..N
# space_angle_deg_n, then per joint joint_angle_deg_n, joint_torque_nm_n,
# then per module gravity_torque_nm_n, accel_torque_nm_n,
# ext_torque_nm_n, then tilt_estimate_deg, com_x_m.
FLOAT_FMT = "{:.9g}"


def csv_header(n_links: int) -> list[str]:
    cols = ["time_s", "platform_tilt_deg"]
    cols += [f"space_angle_deg_{k}" for k in range(1, n_links + 1)]
    cols += [f"joint_angle_deg_{k}" for k in range(1, n_links + 1)]
    cols += [f"joint_torque_nm_{k}" for k in range(1, n_links + 1)]
    cols += [f"gravity_torque_nm_{k}" for k in range(1, n_links + 1)]
    cols += [f"accel_torque_nm_{k}" for k in range(1, n_links + 1)]
    cols += [f"ext_torque_nm_{k}" for k in range(1, n_links + 1)]
    cols += ["tilt_estimate_deg", "com_x_m"]
    return cols


def _decimate_indices(n_rows: int, decimate: int) -> np.ndarray:
    """Every decimate-th tick, always keeping the first and last tick."""
    if n_rows == 0:
        return np.zeros(0, dtype=int)
    idx = np.arange(0, n_rows, decimate)
    if idx[-1] != n_rows - 1:
        idx = np.append(idx, n_rows - 1)
    return idx


def emit_csv(log: TrajectoryLog, path: str | Path, decimate: int = 10) -> None:
    if decimate < 1:
        raise ValueError("decimate must be >= 1")
    n = log.n_links if len(log.time) else log.joint_angles.shape[1]
    idx = _decimate_indices(len(log.time), decimate)
    deg = 180.0 / math.pi
    table = np.column_stack(
        [
            log.time[idx],
            deg * log.platform_tilt[idx],
            deg * log.space_angles[idx],
            deg * log.joint_angles[idx],
            log.active_torques[idx],
            log.gravity_torque[idx],
            log.accel_torque[idx],
            log.ext_torque[idx],
            deg * log.tilt_estimate[idx, None],
            log.com_x[idx, None],
        ]
    ) if len(idx) else np.zeros((0, 2 + 6 * n + 2))
    table = table + 0.0  # normalize negative zeros for stable output
    lines = [",".join(csv_header(n))]
    for row in table:
        lines.append(",".join(FLOAT_FMT.format(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", newline="\n")


def emit_metrics(metrics: RunMetrics, log: TrajectoryLog, path: str | Path) -> None:
    """Flat key-value JSON summary."""
    out = metrics.as_dict()
    out["diverged"] = bool(log.diverged)
    out["divergence_time_s"] = (
        None if log.divergence_time is None else float(log.divergence_time)
    )
    Path(path).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n",
                          newline="\n")


# --------------------------------------------------------------------- #
# SVG plot: one line series per link space angle plus the platform tilt.

_WIDTH, _HEIGHT = 800, 420
_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 60, 140, 30, 45
_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
_PLATFORM_COLOR = "#555555"


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        if raw <= mult * mag:
            step = mult * mag
            break
    first = math.ceil(lo / step) * step
    ticks = []
    v = first
    while v <= hi + 1e-12:
        ticks.append(round(v, 10))
        v += step
    return ticks


def _polyline(xs: np.ndarray, ys: np.ndarray, color: str) -> str:
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
    return (
        f'<polyline fill="none" stroke="{color}" stroke-width="1.2" '
        f'points="{pts}"/>'
    )


def emit_plot(log: TrajectoryLog, path: str | Path, decimate: int = 10,
              title: str = "") -> None:
    if len(log.time) == 0:
        raise ValueError("cannot plot an empty trajectory log")
    idx = _decimate_indices(len(log.time), decimate)
    t = log.time[idx]
    deg = 180.0 / math.pi
    series = [("platform", deg * log.platform_tilt[idx], _PLATFORM_COLOR)]
    for k in range(log.n_links):
        series.append(
            (f"link {k + 1}", deg * log.space_angles[idx, k],
             _COLORS[k % len(_COLORS)])
        )

    t_lo, t_hi = float(t[0]), float(t[-1]) if t[-1] > t[0] else float(t[0]) + 1.0
    y_all = np.concatenate([s[1] for s in series])
    y_lo, y_hi = float(y_all.min()), float(y_all.max())
    if y_hi - y_lo < 1e-9:
        y_lo, y_hi = y_lo - 1.0, y_hi + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    px0, px1 = _MARGIN_L, _WIDTH - _MARGIN_R
    py0, py1 = _HEIGHT - _MARGIN_B, _MARGIN_T

    def sx(x):
        return px0 + (x - t_lo) / (t_hi - t_lo) * (px1 - px0)

    def sy(y):
        return py0 + (y - y_lo) / (y_hi - y_lo) * (py1 - py0)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" '
        f'height="{_HEIGHT}" viewBox="0 0 {_WIDTH} {_HEIGHT}">',
        f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
        f'<rect x="{px0}" y="{py1}" width="{px1 - px0}" '
        f'height="{py0 - py1}" fill="none" stroke="#222"/>',
    ]
    if title:
        parts.append(
            f'<text x="{(px0 + px1) / 2:.1f}" y="20" text-anchor="middle" '
            f'font-family="sans-serif" font-size="14">{title}</text>'
        )
    for xv in _nice_ticks(t_lo, t_hi):
        x = sx(xv)
        parts.append(
            f'<line x1="{x:.2f}" y1="{py0}" x2="{x:.2f}" y2="{py0 + 5}" '
            f'stroke="#222"/>'
        )
        parts.append(
            f'<text x="{x:.2f}" y="{py0 + 18}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{xv:g}</text>'
        )
    for yv in _nice_ticks(y_lo, y_hi):
        y = sy(yv)
        parts.append(
            f'<line x1="{px0 - 5}" y1="{y:.2f}" x2="{px0}" y2="{y:.2f}" '
            f'stroke="#222"/>'
        )
        parts.append(
            f'<text x="{px0 - 8}" y="{y + 4:.2f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{yv:g}</text>'
        )
    parts.append(
        f'<text x="{(px0 + px1) / 2:.1f}" y="{_HEIGHT - 8}" '
        f'text-anchor="middle" font-family="sans-serif" font-size="12">'
        f"time (s)</text>"
    )
    parts.append(
        f'<text x="16" y="{(py0 + py1) / 2:.1f}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 16 {(py0 + py1) / 2:.1f})">'
        f"space angle (deg)</text>"
    )
    for name, ys, color in series:
        parts.append(_polyline(sx(t), sy(ys), color))
    ly = py1 + 10
    for name, _, color in series:
        parts.append(
            f'<line x1="{px1 + 10}" y1="{ly}" x2="{px1 + 34}" y2="{ly}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{px1 + 40}" y="{ly + 4}" font-family="sans-serif" '
            f'font-size="11">{name}</text>'
        )
        ly += 18
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", newline="\n")
