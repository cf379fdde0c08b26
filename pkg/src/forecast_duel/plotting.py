"""Static SVG line charts: one polyline per series, linear axes."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")
MAX_POINTS = 2000


def _thin(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if x.size <= MAX_POINTS:
        return x, y
    idx = np.unique(np.linspace(0, x.size - 1, MAX_POINTS).astype(int))
    return x[idx], y[idx]


def _panel(title: str, x: np.ndarray, series: Sequence[tuple[str, np.ndarray]],
           top: float, width: float = 640, height: float = 260) -> list[str]:
    left, pad = 70.0, 30.0
    plot_w, plot_h = width - left - pad, height - 2 * pad
    ys = np.concatenate([s[np.isfinite(s)] for _, s in series]) if series else np.zeros(1)
    if ys.size == 0:
        ys = np.zeros(1)
    y_lo, y_hi = float(ys.min()), float(ys.max())
    if y_hi - y_lo < 1e-12:
        y_lo, y_hi = y_lo - 1.0, y_hi + 1.0
    x_lo, x_hi = float(x[0]), float(max(x[-1], x[0] + 1))

    def sx(v):
        return left + (v - x_lo) / (x_hi - x_lo) * plot_w

    def sy(v):
        return top + pad + (y_hi - v) / (y_hi - y_lo) * plot_h

    out = [
        f'<text x="{left:.1f}" y="{top + 18:.1f}" font-size="14">{title}</text>',
        f'<rect x="{left:.1f}" y="{top + pad:.1f}" width="{plot_w:.1f}" '
        f'height="{plot_h:.1f}" fill="none" stroke="#444"/>',
        f'<text x="{left - 6:.1f}" y="{top + pad + 4:.1f}" font-size="10" '
        f'text-anchor="end">{y_hi:.4g}</text>',
        f'<text x="{left - 6:.1f}" y="{top + pad + plot_h:.1f}" font-size="10" '
        f'text-anchor="end">{y_lo:.4g}</text>',
        f'<text x="{left + plot_w:.1f}" y="{top + pad + plot_h + 14:.1f}" font-size="10" '
        f'text-anchor="end">n = {x_hi:.0f}</text>',
    ]
    if y_lo < 0.0 < y_hi:
        out.append(f'<line x1="{left:.1f}" x2="{left + plot_w:.1f}" y1="{sy(0.0):.1f}" '
                   f'y2="{sy(0.0):.1f}" stroke="#bbb" stroke-dasharray="4 3"/>')
    for i, (label, y) in enumerate(series):
        tx, ty = _thin(x, y)
        ok = np.isfinite(ty)
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(tx[ok], ty[ok]))
        color = COLORS[i % len(COLORS)]
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{pts}"/>')
        out.append(f'<text x="{left + 10 + 120 * i:.1f}" y="{top + pad - 6:.1f}" '
                   f'font-size="11" fill="{color}">{label}</text>')
    return out


def write_capital_chart(path, n: np.ndarray, log_k: np.ndarray, theta1: np.ndarray,
                        theta2: np.ndarray) -> None:
    """log K_n against n, and theta_{n,1}/n, theta_{n,2}/n against n."""
    n = np.asarray(n, dtype=float)
    body = ['<svg xmlns="http://www.w3.org/2000/svg" width="640" height="540">',
            '<rect width="100%" height="100%" fill="white"/>']
    body += _panel("log K_n", n, [("log K", np.asarray(log_k, dtype=float))], top=0.0)
    body += _panel("theta_i / n", n, [("theta_1/n", theta1 / n), ("theta_2/n", theta2 / n)],
                   top=270.0)
    body.append("</svg>")
    Path(path).write_text("\n".join(body) + "\n")
