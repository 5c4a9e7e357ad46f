"""Deterministic SVG rendering of episode traces.

Draws each agent's trajectory as a polyline, marks starts and goals,
annotates steps where the filter stopped an agent with gray circles, and
flags terminal outcomes: a cross for crashes, a triangle for timeouts.
"""

from __future__ import annotations

from collections import defaultdict
from typing import Sequence

from .. import envcore as ec

VIEW = 512.0
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
           "#8c564b", "#e377c2", "#17becf"]


def _fmt(x: float) -> str:
    return f"{x:.2f}"


class _Svg:
    def __init__(self, size: float):
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{int(size)}" '
            f'height="{int(size)}" viewBox="0 0 {int(size)} {int(size)}">'
        ]

    def add(self, element: str):
        self.parts.append(element)

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def render_trace(
    records: Sequence[ec.StepRecord],
    scenario: ec.Scenario | None = None,
    map_size: float | None = None,
) -> str:
    """Render a trace (optionally with its scenario) to an SVG string."""
    if scenario is not None:
        map_size = scenario.world.map_size
    if map_size is None:
        map_size = 128.0
    scale = VIEW / map_size

    def sx(x: float) -> str:
        return _fmt(x * scale)

    def sy(y: float) -> str:
        return _fmt(VIEW - y * scale)  # world y grows upward

    svg = _Svg(VIEW)
    svg.add(f'<rect x="0" y="0" width="{int(VIEW)}" height="{int(VIEW)}" '
            'fill="white" stroke="black" stroke-width="2"/>')

    if scenario is not None:
        for c in scenario.world.obstacles:
            svg.add(
                f'<circle cx="{sx(c.cx)}" cy="{sy(c.cy)}" r="{_fmt(c.radius * scale)}" '
                'fill="#555555" fill-opacity="0.6" stroke="none"/>'
            )

    by_agent: dict[int, list[ec.StepRecord]] = defaultdict(list)
    for r in records:
        by_agent[r.agent_id].append(r)

    g_rad = ec.goal_radius(map_size)
    for i in sorted(by_agent):
        color = PALETTE[i % len(PALETTE)]
        rows = sorted(by_agent[i], key=lambda r: r.t)
        pts = [(r.x, r.y) for r in rows]
        if scenario is not None:
            start = scenario.starts[i]
            pts = [(start.x, start.y)] + pts
            gx, gy = scenario.goal_centers[i]
            svg.add(
                f'<circle cx="{sx(gx)}" cy="{sy(gy)}" r="{_fmt(g_rad * scale)}" '
                f'fill="none" stroke="{color}" stroke-width="1.5" '
                'stroke-dasharray="4 3"/>'
            )
        x0, y0 = pts[0]
        svg.add(
            f'<rect x="{_fmt(float(sx(x0)) - 5)}" y="{_fmt(float(sy(y0)) - 5)}" '
            f'width="10" height="10" fill="{color}"/>'
        )
        path = " ".join(f"{sx(x)},{sy(y)}" for x, y in pts)
        svg.add(f'<polyline points="{path}" fill="none" stroke="{color}" '
                'stroke-width="2"/>')
        for r in rows:
            if r.f == 0:
                svg.add(
                    f'<circle cx="{sx(r.x)}" cy="{sy(r.y)}" r="6" fill="#999999" '
                    'fill-opacity="0.7" stroke="none"/>'
                )
        last = rows[-1]
        cx, cy = float(sx(last.x)), float(sy(last.y))
        if last.status == "crashed":
            svg.add(
                f'<path d="M {_fmt(cx - 7)} {_fmt(cy - 7)} L {_fmt(cx + 7)} {_fmt(cy + 7)} '
                f'M {_fmt(cx - 7)} {_fmt(cy + 7)} L {_fmt(cx + 7)} {_fmt(cy - 7)}" '
                f'stroke="{color}" stroke-width="3" fill="none"/>'
            )
        elif last.status == "active":  # ran out of time while still moving
            svg.add(
                f'<path d="M {_fmt(cx)} {_fmt(cy - 8)} L {_fmt(cx + 7)} {_fmt(cy + 6)} '
                f'L {_fmt(cx - 7)} {_fmt(cy + 6)} Z" '
                f'stroke="{color}" stroke-width="2" fill="none"/>'
            )
    return svg.render()
