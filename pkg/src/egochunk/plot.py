"""Deterministic SVG renderings of the camera trajectory and its chunks.

The 3-D (x, y, t) trajectory is drawn as two side-by-side projections,
x against t and y against t.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .chunking import ChunkPartition, Trajectory

# tab10 without purple, which is reserved for centre markers
PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#8c564b",
           "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]
CENTER_COLOR = "#800080"

PANEL_W, PANEL_H = 420, 320
MARGIN = 50
GAP = 40


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _range(values: np.ndarray, pad: float = 0.05) -> tuple[float, float]:
    lo, hi = float(np.min(values)), float(np.max(values))
    if hi - lo < 1e-12:
        return lo - pad, hi + pad
    span = hi - lo
    return lo - pad * span, hi + pad * span


def render_svg(traj: Trajectory, partition: ChunkPartition | None = None, title: str = "") -> str:
    """SVG text for the trajectory, coloured by chunk when a partition is given."""
    n = len(traj)
    labels = partition.assignment if partition is not None else np.zeros(n, dtype=int)
    if len(labels) != n:
        raise ValueError(f"partition covers {len(labels)} frames, trajectory has {n}")
    t = traj.t
    tlo, thi = _range(t)
    width = 2 * PANEL_W + GAP + 2 * MARGIN
    height = PANEL_H + 2 * MARGIN
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>')

    for p, (name, vals) in enumerate((("x", traj.x), ("y", traj.y))):
        ox = MARGIN + p * (PANEL_W + GAP)
        oy = MARGIN
        vlo, vhi = _range(vals)

        def sx(tv):
            return ox + (tv - tlo) / (thi - tlo) * PANEL_W

        def sy(v):
            return oy + PANEL_H - (v - vlo) / (vhi - vlo) * PANEL_H

        out.append(f'<g class="panel" id="panel-{name}t">')
        out.append(f'<rect x="{ox}" y="{oy}" width="{PANEL_W}" height="{PANEL_H}" '
                   f'fill="none" stroke="black"/>')
        out.append(f'<text x="{ox + PANEL_W / 2:.1f}" y="{oy + PANEL_H + 35}" '
                   f'text-anchor="middle" font-size="12">t (frame)</text>')
        out.append(f'<text x="{ox - 35}" y="{oy + PANEL_H / 2:.1f}" text-anchor="middle" '
                   f'font-size="12" transform="rotate(-90 {ox - 35} {oy + PANEL_H / 2:.1f})">'
                   f'{name} (normalized)</text>')
        for lo_hi, anchor_y in ((vlo, oy + PANEL_H), (vhi, oy)):
            out.append(f'<text x="{ox - 4}" y="{anchor_y:.1f}" text-anchor="end" '
                       f'font-size="10">{lo_hi:.3f}</text>')
        for i in range(n):
            color = PALETTE[labels[i] % len(PALETTE)]
            out.append(f'<circle class="point chunk-{labels[i]}" cx="{_fmt(sx(t[i]))}" '
                       f'cy="{_fmt(sy(vals[i]))}" r="3" fill="{color}"/>')
        if partition is not None:
            col = 0 if name == "x" else 1
            for c, center in enumerate(partition.centers):
                cx, cy = sx(center[2]), sy(center[col])
                out.append(
                    f'<g class="center chunk-{c}" stroke="{CENTER_COLOR}" stroke-width="2">'
                    f'<line x1="{_fmt(cx - 6)}" y1="{_fmt(cy - 6)}" x2="{_fmt(cx + 6)}" y2="{_fmt(cy + 6)}"/>'
                    f'<line x1="{_fmt(cx - 6)}" y1="{_fmt(cy + 6)}" x2="{_fmt(cx + 6)}" y2="{_fmt(cy - 6)}"/>'
                    f'</g>'
                )
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_plots(directory, traj: Trajectory, partition: ChunkPartition | None = None) -> list[Path]:
    """``trajectory.svg`` always, ``chunks.svg`` when a partition is given."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    docs = [("trajectory.svg", render_svg(traj, None, "Camera motion estimate"))]
    if partition is not None:
        docs.append(("chunks.svg", render_svg(traj, partition, f"Temporal chunks (k={partition.k})")))
    paths = []
    for name, text in docs:
        path = directory / name
        path.write_text(text, encoding="utf-8")
        paths.append(path)
    return paths
