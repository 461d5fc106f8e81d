"""Decoding dense prediction maps into oriented word boxes.

Cells above the segment threshold become graph nodes with decoded boxes;
link scores above the link threshold become edges (within-layer scores are
symmetrized by averaging the two directions).  Connected components are then
fused: average the angles, fit the axis line through the centroid, project
the centers, and span the extremes.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidPredictionError, ShapeMismatchError
from .geometry import RotatedRect, normalize_angle
from .topology import CROSS_OFFSETS, GridIndex, LayerPyramid, WITHIN_OFFSETS

__all__ = [
    "CROSS_SLICE",
    "FIRST_LAYER_CHANNELS",
    "FULL_CHANNELS",
    "OFFSET_SLICE",
    "PredictionMaps",
    "SEG_SLICE",
    "SegmentGraph",
    "WITHIN_SLICE",
    "GraphNode",
    "build_graph",
    "combine_segments",
    "connected_components",
    "decode_segment",
    "detect",
    "layer_channels",
]

# Channel layout of a raw predictor output (and of map files): a (negative,
# positive) score pair, five offsets, eight within-layer link pairs in
# WITHIN_OFFSETS order, then four cross-layer link pairs in CROSS_OFFSETS
# order.  The finest layer has no cross-layer block.
SEG_SLICE = slice(0, 2)
OFFSET_SLICE = slice(2, 7)
WITHIN_SLICE = slice(7, 23)
CROSS_SLICE = slice(23, 31)
FULL_CHANNELS = 31
FIRST_LAYER_CHANNELS = 23


def layer_channels(layer_index: int) -> int:
    """Raw channel count of a layer (the finest one lacks cross links)."""
    return FIRST_LAYER_CHANNELS if layer_index == 1 else FULL_CHANNELS


@dataclass(eq=False)
class PredictionMaps:
    """Per-layer probability maps plus offsets, validated on construction.

    seg_score          (h, w) positive-class probability
    offsets            (h, w, 5)
    within_link_score  (h, w, 8) probabilities, WITHIN_OFFSETS slot order
    cross_link_score   (h, w, 4) for layers 2..6, None on layer 1
    """

    pyramid: LayerPyramid
    seg_score: list = field(default_factory=list)
    offsets: list = field(default_factory=list)
    within_link_score: list = field(default_factory=list)
    cross_link_score: list = field(default_factory=list)

    def __post_init__(self) -> None:
        n = len(self.pyramid.layers)
        for name in ("seg_score", "offsets", "within_link_score", "cross_link_score"):
            if len(getattr(self, name)) != n:
                raise ShapeMismatchError(f"{name} must have {n} per-layer entries")
        for li, spec in enumerate(self.pyramid.layers):
            shape = (spec.height, spec.width)
            self._check(self.seg_score[li], shape, f"seg_score[{li}]")
            self._check(self.offsets[li], shape + (5,), f"offsets[{li}]", prob=False)
            self._check(
                self.within_link_score[li], shape + (8,), f"within_link_score[{li}]"
            )
            cross = self.cross_link_score[li]
            if li == 0:
                if cross is not None:
                    raise ShapeMismatchError("layer 1 must not carry cross-layer scores")
            else:
                self._check(cross, shape + (4,), f"cross_link_score[{li}]")

    @staticmethod
    def _check(arr, shape, name, prob=True):
        if not isinstance(arr, np.ndarray) or arr.shape != shape:
            got = getattr(arr, "shape", None)
            raise ShapeMismatchError(f"{name} must have shape {shape}, got {got}")
        if prob:
            finite = np.isfinite(arr)
            if not finite.all() or (arr < 0.0).any() or (arr > 1.0).any():
                raise ValueError(f"{name} must hold probabilities in [0, 1]")


@dataclass(frozen=True)
class GraphNode:
    """A surviving segment: its cell, decoded box, and score."""

    index: GridIndex
    rect: RotatedRect
    score: float


@dataclass
class SegmentGraph:
    """Filtered segments as nodes, filtered links as undirected scored edges."""

    nodes: list[GraphNode]
    edges: list[tuple[int, int, float]]


def decode_segment(offsets: Sequence[float], box: RotatedRect) -> RotatedRect:
    """Apply regression offsets to a default box (inverse of encoding)."""
    values = np.asarray(offsets, dtype=float)
    if values.shape != (5,) or not np.isfinite(values).all():
        raise InvalidPredictionError(f"offsets must be 5 finite values, got {offsets!r}")
    dx, dy, dw, dh, dtheta = values
    side = box.w
    return RotatedRect(
        side * dx + box.x,
        side * dy + box.y,
        side * math.exp(dw),
        side * math.exp(dh),
        normalize_angle(dtheta),
    )


def build_graph(
    maps: PredictionMaps,
    pyramid: LayerPyramid,
    seg_thresh: float,
    link_thresh: float,
) -> SegmentGraph:
    """Filter cells and links by score and assemble the segment graph.

    A cell survives when its segment score is >= seg_thresh.  Within-layer
    edges use the mean of the two directed scores; cross-layer edges use the
    single directed score stored on the coarser endpoint.
    """
    if maps.pyramid != pyramid:
        raise ShapeMismatchError("prediction maps were built for a different pyramid")

    node_masks = []
    node_index = []
    nodes: list[GraphNode] = []
    next_id = 0
    for li, spec in enumerate(pyramid.layers):
        mask = maps.seg_score[li] >= seg_thresh
        index = np.full(mask.shape, -1, dtype=np.int64)
        ys, xs = np.nonzero(mask)
        if ys.size:
            offsets = maps.offsets[li][ys, xs]
            if not np.isfinite(offsets).all():
                raise InvalidPredictionError(
                    f"non-finite offsets among surviving cells on layer {spec.index}"
                )
            index[ys, xs] = np.arange(next_id, next_id + ys.size)
            stride_x = pyramid.input_w / spec.width
            stride_y = pyramid.input_h / spec.height
            for y, x in zip(ys.tolist(), xs.tolist()):
                box = RotatedRect(
                    stride_x * (x + 0.5),
                    stride_y * (y + 0.5),
                    spec.box_size,
                    spec.box_size,
                    0.0,
                )
                nodes.append(
                    GraphNode(
                        index=GridIndex(spec.index, x, y),
                        rect=decode_segment(maps.offsets[li][y, x], box),
                        score=float(maps.seg_score[li][y, x]),
                    )
                )
            next_id += ys.size
        node_masks.append(mask)
        node_index.append(index)

    edges: list[tuple[int, int, float]] = []
    for li, spec in enumerate(pyramid.layers):
        mask = node_masks[li]
        index = node_index[li]
        scores = maps.within_link_score[li]
        h, w = mask.shape
        # Slots 4..7 point to "forward" neighbors; slot 7-k holds the
        # reverse direction, so each unordered pair is visited once.
        for k in range(4, 8):
            dy, dx = WITHIN_OFFSETS[k]
            ys0, ys1 = max(0, -dy), min(h, h - dy)
            xs0, xs1 = max(0, -dx), min(w, w - dx)
            fwd = scores[ys0:ys1, xs0:xs1, k]
            rev = scores[ys0 + dy : ys1 + dy, xs0 + dx : xs1 + dx, 7 - k]
            mean = (fwd + rev) / 2.0
            both = (
                mask[ys0:ys1, xs0:xs1]
                & mask[ys0 + dy : ys1 + dy, xs0 + dx : xs1 + dx]
                & (mean >= link_thresh)
            )
            for y, x in np.argwhere(both):
                a = int(index[ys0 + y, xs0 + x])
                b = int(index[ys0 + y + dy, xs0 + x + dx])
                edges.append((a, b, float(mean[y, x])))

        if li == 0:
            continue
        cross = maps.cross_link_score[li]
        fine_mask = node_masks[li - 1]
        fine_index = node_index[li - 1]
        for k, (dy, dx) in enumerate(CROSS_OFFSETS):
            score_k = cross[:, :, k]
            both = mask & fine_mask[dy::2, dx::2] & (score_k >= link_thresh)
            for y, x in np.argwhere(both):
                a = int(index[y, x])
                b = int(fine_index[2 * y + dy, 2 * x + dx])
                edges.append((a, b, float(score_k[y, x])))

    return SegmentGraph(nodes=nodes, edges=edges)


def connected_components(graph: SegmentGraph) -> list[list[int]]:
    """Partition graph nodes into connected components.

    Traversal is iterative (no recursion limit) and the output is canonical:
    each component sorted ascending, components ordered by smallest member.
    """
    n = len(graph.nodes)
    adjacency: list[list[int]] = [[] for _ in range(n)]
    for a, b, _ in graph.edges:
        adjacency[a].append(b)
        adjacency[b].append(a)
    for neighbors in adjacency:
        neighbors.sort()
    seen = [False] * n
    components = []
    for start in range(n):
        if seen[start]:
            continue
        stack = [start]
        seen[start] = True
        members = []
        while stack:
            node = stack.pop()
            members.append(node)
            for nb in adjacency[node]:
                if not seen[nb]:
                    seen[nb] = True
                    stack.append(nb)
        members.sort()
        components.append(members)
    return components


def combine_segments(segments: Sequence[RotatedRect]) -> RotatedRect:
    """Fuse a connected component of segments into one oriented box.

    Segments are first put in a canonical field order, which makes the
    result exactly permutation invariant.  Angles near the +-pi/2 wrap are
    still averaged arithmetically (flagged with a warning).
    """
    segs = sorted(segments, key=RotatedRect.fields)
    if not segs:
        raise ValueError("cannot combine an empty component")
    count = len(segs)
    thetas = [s.theta for s in segs]
    if max(thetas) - min(thetas) > math.pi / 2.0:
        warnings.warn(
            "component mixes angles across the +-pi/2 wrap; the arithmetic "
            "mean angle may not be representative",
            RuntimeWarning,
            stacklevel=2,
        )
    theta = math.fsum(thetas) / count
    ux = math.cos(theta)
    uy = math.sin(theta)
    cx = math.fsum(s.x for s in segs) / count
    cy = math.fsum(s.y for s in segs) / count
    # The least-squares line with fixed direction passes through the
    # centroid; projections reduce to 1-D coordinates along it.
    ts = [(s.x - cx) * ux + (s.y - cy) * uy for s in segs]
    lo = min(range(count), key=lambda i: (ts[i], i))
    hi = max(range(count), key=lambda i: (ts[i], -i))
    px, py = cx + ts[lo] * ux, cy + ts[lo] * uy
    qx, qy = cx + ts[hi] * ux, cy + ts[hi] * uy
    width = math.hypot(qx - px, qy - py) + (segs[lo].w + segs[hi].w) / 2.0
    height = math.fsum(s.h for s in segs) / count
    return RotatedRect((px + qx) / 2.0, (py + qy) / 2.0, width, height, theta)


def detect(
    maps: PredictionMaps,
    pyramid: LayerPyramid,
    seg_thresh: float,
    link_thresh: float,
) -> list[RotatedRect]:
    """Full decoding: graph construction, components, and combination."""
    graph = build_graph(maps, pyramid, seg_thresh, link_thresh)
    return [
        combine_segments([graph.nodes[i].rect for i in component])
        for component in connected_components(graph)
    ]
