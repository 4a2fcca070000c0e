"""Static SVG drawings of trajectories and the groups an activity tree assigns."""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .model import ActivityTree, Scene

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")
SIZE = 600.0
MARGIN = 30.0


def actor_color(actor: int) -> str:
    return PALETTE[actor % len(PALETTE)]


def default_frames(horizon: int) -> tuple[int, ...]:
    return tuple(sorted({1, (horizon + 1) // 2, horizon}))


def _fmt(v: float) -> str:
    return f"{v:.2f}"


class _Viewport:
    def __init__(self, points: np.ndarray):
        lo, hi = points.min(axis=0), points.max(axis=0)
        span = float(max(hi - lo)) or 1.0
        self.lo, self.scale = lo, (SIZE - 2 * MARGIN) / span

    def __call__(self, xy) -> tuple[float, float]:
        x, y = (np.asarray(xy) - self.lo) * self.scale
        return MARGIN + x, SIZE - MARGIN - y  # y axis points up


def group_boxes(scene: Scene, tree: ActivityTree, frame: int) -> list[tuple[frozenset, np.ndarray, np.ndarray]]:
    """(members, lower corner, upper corner) of each physical group active at `frame`."""
    out = []
    for leaf in sorted(tree.leaves(), key=lambda n: (n.start, sorted(n.participants))):
        if leaf.start <= frame <= leaf.end:
            pts = np.array([scene.positions[scene.actor_ids.index(a), frame - 1] for a in sorted(leaf.participants)])
            out.append((leaf.participants, pts.min(axis=0), pts.max(axis=0)))
    return out


def render_svg(scene: Scene, tree: ActivityTree | None = None, frames=None) -> str:
    view = _Viewport(scene.positions.reshape(-1, 2))
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE:.0f}" height="{SIZE:.0f}" '
             f'viewBox="0 0 {SIZE:.0f} {SIZE:.0f}">',
             f'<rect width="{SIZE:.0f}" height="{SIZE:.0f}" fill="white"/>']
    for j, actor in enumerate(scene.actor_ids):
        pts = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in map(view, scene.positions[j]))
        color = actor_color(actor)
        parts.append(f'<polyline class="actor" data-actor="{actor}" points="{pts}" '
                     f'fill="none" stroke="{color}" stroke-width="2"/>')
        x, y = view(scene.positions[j, -1])
        parts.append(f'<text x="{_fmt(x + 4)}" y="{_fmt(y - 4)}" font-size="12" fill="{color}">'
                     f'{escape(str(actor))}</text>')
    if tree is not None:
        pad = 8.0
        for f in frames or default_frames(scene.horizon):
            for members, lo, hi in group_boxes(scene, tree, f):
                (x0, y1), (x1, y0) = view(lo), view(hi)
                ids = " ".join(map(str, sorted(members)))
                parts.append(f'<rect class="group" data-frame="{f}" data-members="{ids}" '
                             f'x="{_fmt(x0 - pad)}" y="{_fmt(y0 - pad)}" '
                             f'width="{_fmt(x1 - x0 + 2 * pad)}" height="{_fmt(y1 - y0 + 2 * pad)}" '
                             f'fill="none" stroke="black" stroke-dasharray="4 3"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def save_svg(scene: Scene, path, tree: ActivityTree | None = None, frames=None) -> None:
    Path(path).write_text(render_svg(scene, tree, frames))
