#!/usr/bin/env python3
"""
CPC-SNN Accuracy Curves
Mean-over-seeds polylines with a +/- std band, written as plain SVG
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")

@dataclass
class CurveSeries:
    """Per-epoch mean over the runs still going, std only where every run is"""
    epochs: List[int]
    mean: List[float]
    band_epochs: List[int]
    band_low: List[float]
    band_high: List[float]

def aggregate_runs(runs: Sequence[Sequence[float]]) -> CurveSeries:
    """
    Combine per-run metric traces of unequal length

    The mean at epoch e averages the runs that reached e. The band
    (mean +/- sample std) stops at the shortest run.
    """
    runs = [list(r) for r in runs if len(r)]
    if not runs:
        return CurveSeries([], [], [], [], [])
    longest = max(len(r) for r in runs)
    shortest = min(len(r) for r in runs)
    epochs, mean = [], []
    band_epochs, low, high = [], [], []
    for e in range(longest):
        values = np.array([r[e] for r in runs if len(r) > e], dtype=np.float64)
        m = float(values.mean())
        epochs.append(e + 1)
        mean.append(m)
        if e < shortest and len(runs) > 1:
            s = float(values.std(ddof=1))
            band_epochs.append(e + 1)
            low.append(m - s)
            high.append(m + s)
    return CurveSeries(epochs, mean, band_epochs, low, high)

def curves_svg(series: Dict[str, CurveSeries], title: str, y_label: str = "validation accuracy",
               y_range: Optional[Tuple[float, float]] = (0.0, 1.0), width: int = 640, height: int = 400) -> str:
    """Render one or more labelled curves into a standalone SVG document"""
    left, right, top, bottom = 60, 150, 40, 50
    plot_w, plot_h = width - left - right, height - top - bottom
    max_epoch = max([s.epochs[-1] for s in series.values() if s.epochs] or [1])
    if y_range is None:
        values = [v for s in series.values() for v in s.band_low + s.band_high + s.mean]
        lo, hi = (min(values), max(values)) if values else (0.0, 1.0)
        pad = 0.05 * (hi - lo or 1.0)
        y_range = (lo - pad, hi + pad)
    y0, y1 = y_range

    def sx(epoch: float) -> float:
        return left + plot_w * (epoch - 1) / max(max_epoch - 1, 1)

    def sy(value: float) -> float:
        clipped = min(max(value, y0), y1)
        return top + plot_h * (1.0 - (clipped - y0) / (y1 - y0))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line x1="{left}" y1="{top + plot_h}" x2="{left + plot_w}" y2="{top + plot_h}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" stroke="black"/>',
    ]
    for i in range(6):
        value = y0 + (y1 - y0) * i / 5
        y = sy(value)
        parts.append(f'<line x1="{left - 4}" y1="{y:.1f}" x2="{left}" y2="{y:.1f}" stroke="black"/>')
        parts.append(f'<text x="{left - 8}" y="{y + 4:.1f}" text-anchor="end">{value:.2f}</text>')
    for epoch in sorted({1, max_epoch} | set(range(10, max_epoch, 10))):
        x = sx(epoch)
        parts.append(f'<line x1="{x:.1f}" y1="{top + plot_h}" x2="{x:.1f}" y2="{top + plot_h + 4}" stroke="black"/>')
        parts.append(f'<text x="{x:.1f}" y="{top + plot_h + 18}" text-anchor="middle">{epoch}</text>')
    parts.append(f'<text x="{left + plot_w / 2:.1f}" y="{height - 10}" text-anchor="middle">epoch</text>')
    parts.append(f'<text x="16" y="{top + plot_h / 2:.1f}" text-anchor="middle" '
                 f'transform="rotate(-90 16 {top + plot_h / 2:.1f})">{escape(y_label)}</text>')

    for i, (label, s) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        if len(s.band_epochs) > 1:
            upper = [f"{sx(e):.2f},{sy(v):.2f}" for e, v in zip(s.band_epochs, s.band_high)]
            lower = [f"{sx(e):.2f},{sy(v):.2f}" for e, v in zip(reversed(s.band_epochs), reversed(s.band_low))]
            parts.append(f'<polygon points="{" ".join(upper + lower)}" fill="{color}" fill-opacity="0.2" '
                         f'stroke="none"/>')
        if s.epochs:
            points = " ".join(f"{sx(e):.2f},{sy(v):.2f}" for e, v in zip(s.epochs, s.mean))
            parts.append(f'<polyline points="{points}" fill="none" stroke="{color}" stroke-width="2"/>')
        ly = top + 16 * (i + 1)
        parts.append(f'<line x1="{left + plot_w + 12}" y1="{ly - 4}" x2="{left + plot_w + 32}" y2="{ly - 4}" '
                     f'stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{left + plot_w + 36}" y="{ly}">{escape(label)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"

def write_curves(series: Dict[str, CurveSeries], path: Path, title: str, **kwargs) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(curves_svg(series, title, **kwargs))
    return path
