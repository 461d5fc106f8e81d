"""Static SVG rendering of scenes, segment graphs, and combined boxes.

Within-layer links draw in red and cross-layer links in green; word boxes,
segments, and final detections use fixed colors.  Output bytes are a pure
function of the inputs (fixed float formatting, no timestamps).
"""

from __future__ import annotations

from .decoder import SegmentGraph
from .geometry import RotatedRect, to_quad
from .synth import Scene

__all__ = ["render_svg"]

_WORD_COLOR = "#4878b0"
_SEGMENT_COLOR = "#e8a723"
_WITHIN_LINK_COLOR = "#d62728"
_CROSS_LINK_COLOR = "#2ca02c"
_DETECTION_COLOR = "#1a1a1a"


def _fmt(v: float) -> str:
    return f"{v:.3f}"


def _polygon(rect: RotatedRect, color: str, width: float, dash: str = "") -> str:
    points = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in to_quad(rect).vertices)
    extra = f' stroke-dasharray="{dash}"' if dash else ""
    return (
        f'<polygon points="{points}" fill="none" stroke="{color}" '
        f'stroke-width="{_fmt(width)}"{extra}/>'
    )


def _line(x0, y0, x1, y1, color: str) -> str:
    return (
        f'<line x1="{_fmt(x0)}" y1="{_fmt(y0)}" x2="{_fmt(x1)}" y2="{_fmt(y1)}" '
        f'stroke="{color}" stroke-width="1.2"/>'
    )


def render_svg(
    scene: Scene,
    graph: SegmentGraph | None = None,
    detections: list[RotatedRect] | None = None,
) -> str:
    """Compose the SVG document; identical inputs give identical bytes."""
    w = scene.canvas_w
    h = scene.canvas_h
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
        f'viewBox="0 0 {w} {h}">',
        f'<rect x="0" y="0" width="{w}" height="{h}" fill="#ffffff" stroke="#999999"/>',
    ]
    for word in scene.words:
        parts.append(_polygon(word.rect, _WORD_COLOR, 1.5))
    if graph is not None:
        for node in graph.nodes:
            parts.append(_polygon(node.rect, _SEGMENT_COLOR, 1.0))
        for a, b, _ in graph.edges:
            na = graph.nodes[a]
            nb = graph.nodes[b]
            color = (
                _WITHIN_LINK_COLOR
                if na.index.layer == nb.index.layer
                else _CROSS_LINK_COLOR
            )
            parts.append(_line(na.rect.x, na.rect.y, nb.rect.x, nb.rect.y, color))
    if detections is not None:
        for det in detections:
            parts.append(_polygon(det, _DETECTION_COLOR, 2.0, dash="6,3"))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
