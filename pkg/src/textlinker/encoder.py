"""Groundtruth encoding: word boxes to per-layer training targets.

A cell is labeled positive for a word when its default-box center falls
inside the word's rotated rectangle and the box side is within a factor 1.5
of the word height.  Positive cells get a clipped groundtruth segment and
its regression offsets; links are positive only between cells matched to
the same word.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InconsistentLabelError
from .geometry import RotatedRect, contains_points, rotate_about
from .topology import (
    CROSS_OFFSETS,
    GridIndex,
    LayerPyramid,
    WITHIN_OFFSETS,
    default_box,
)

__all__ = [
    "GroundTruthMaps",
    "MAX_SIZE_RATIO",
    "WordBox",
    "encode",
    "encode_offsets",
    "groundtruth_segment",
    "label_default_boxes",
    "label_links",
    "size_ratio",
]

# Upper bound on max(box/height, height/box) for a cell to match a word.
MAX_SIZE_RATIO = 1.5

NO_MATCH = -1


@dataclass(frozen=True)
class WordBox:
    """A groundtruth word: its oriented box plus a scene-unique id."""

    rect: RotatedRect
    word_id: int


@dataclass(eq=False)
class GroundTruthMaps:
    """Per-layer training targets derived from one scene's word boxes.

    seg_label      (h, w) uint8, 1 where the cell matches a word
    match_id       (h, w) int64, matched word id or -1
    offsets        (h, w, 5) float64 (dx, dy, dw, dh, dtheta); zero-filled
                   and meaningless where seg_label is 0
    within_link_label  (h, w, 8) uint8, slot order = WITHIN_OFFSETS
    cross_link_label   (h, w, 4) uint8 for layers 2..6 (None on layer 1),
                   slot order = CROSS_OFFSETS
    """

    pyramid: LayerPyramid
    seg_label: list = field(default_factory=list)
    match_id: list = field(default_factory=list)
    offsets: list = field(default_factory=list)
    within_link_label: list = field(default_factory=list)
    cross_link_label: list = field(default_factory=list)

    @property
    def n_pos_segments(self) -> int:
        return int(sum(m.sum() for m in self.seg_label))

    @property
    def n_pos_links(self) -> int:
        total = sum(m.sum() for m in self.within_link_label)
        total += sum(m.sum() for m in self.cross_link_label if m is not None)
        return int(total)


def size_ratio(box_size: float, word_height: float) -> float:
    """Scale mismatch between a default box and a word, always >= 1."""
    return max(box_size / word_height, word_height / box_size)


def label_default_boxes(
    words: list[WordBox],
    pyramid: LayerPyramid,
    max_size_ratio: float = MAX_SIZE_RATIO,
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Per-layer positive masks and matched word ids.

    A cell qualifies for a word when the default-box center is inside the
    word's rotated rectangle and the size ratio is within bound; among
    qualifying words the one with the smallest ratio wins, ties going to the
    lowest word id.
    """
    seg_labels = []
    match_ids = []
    ordered = sorted(words, key=lambda wb: wb.word_id)
    for spec in pyramid.layers:
        xs = (np.arange(spec.width) + 0.5) * (pyramid.input_w / spec.width)
        ys = (np.arange(spec.height) + 0.5) * (pyramid.input_h / spec.height)
        grid_x, grid_y = np.meshgrid(xs, ys)
        best_ratio = np.full((spec.height, spec.width), np.inf)
        match = np.full((spec.height, spec.width), NO_MATCH, dtype=np.int64)
        for word in ordered:
            ratio = size_ratio(spec.box_size, word.rect.h)
            if ratio > max_size_ratio:
                continue
            inside = contains_points(word.rect, grid_x, grid_y)
            better = inside & (ratio < best_ratio)
            best_ratio[better] = ratio
            match[better] = word.word_id
        seg_labels.append((match != NO_MATCH).astype(np.uint8))
        match_ids.append(match)
    return seg_labels, match_ids


def groundtruth_segment(box: RotatedRect, word: RotatedRect) -> RotatedRect:
    """Clip a word to the horizontal span of a default box.

    The word is rotated about the box center until horizontal, its x-extent
    is intersected with the box's own x-span, and the clipped piece is
    rotated back.  Height and angle come straight from the word.
    """
    pivot = (box.x, box.y)
    level = rotate_about(word, pivot, -word.theta)
    word_lo = level.x - level.w / 2.0
    word_hi = level.x + level.w / 2.0
    lo = max(word_lo, box.x - box.w / 2.0)
    hi = min(word_hi, box.x + box.w / 2.0)
    if hi <= lo:
        raise InconsistentLabelError(
            "default box has no horizontal overlap with the word it was matched to"
        )
    clipped = RotatedRect((lo + hi) / 2.0, level.y, hi - lo, level.h, 0.0)
    return rotate_about(clipped, pivot, word.theta)


def encode_offsets(segment: RotatedRect, box: RotatedRect) -> np.ndarray:
    """Regression targets that map a default box onto a segment."""
    side = box.w
    return np.array(
        [
            (segment.x - box.x) / side,
            (segment.y - box.y) / side,
            math.log(segment.w / side),
            math.log(segment.h / side),
            segment.theta,
        ]
    )


def label_links(
    seg_label: list[np.ndarray],
    match_id: list[np.ndarray],
    pyramid: LayerPyramid,
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Link labels: positive iff both endpoints are positive with equal match.

    Slots whose neighbor falls off the map stay negative.  Returns the
    within-layer maps for every layer and cross-layer maps for layers 2..6
    (None for layer 1).
    """
    within = []
    cross = []
    for li, spec in enumerate(pyramid.layers):
        pos = seg_label[li].astype(bool)
        match = match_id[li]
        h, w = pos.shape
        labels = np.zeros((h, w, len(WITHIN_OFFSETS)), dtype=np.uint8)
        for k, (dy, dx) in enumerate(WITHIN_OFFSETS):
            ys0, ys1 = max(0, -dy), min(h, h - dy)
            xs0, xs1 = max(0, -dx), min(w, w - dx)
            a_pos = pos[ys0:ys1, xs0:xs1]
            b_pos = pos[ys0 + dy : ys1 + dy, xs0 + dx : xs1 + dx]
            a_match = match[ys0:ys1, xs0:xs1]
            b_match = match[ys0 + dy : ys1 + dy, xs0 + dx : xs1 + dx]
            labels[ys0:ys1, xs0:xs1, k] = (a_pos & b_pos & (a_match == b_match)).astype(
                np.uint8
            )
        within.append(labels)

        if li == 0:
            cross.append(None)
            continue
        fine_pos = seg_label[li - 1].astype(bool)
        fine_match = match_id[li - 1]
        labels = np.zeros((h, w, len(CROSS_OFFSETS)), dtype=np.uint8)
        for k, (dy, dx) in enumerate(CROSS_OFFSETS):
            nb_pos = fine_pos[dy::2, dx::2]
            nb_match = fine_match[dy::2, dx::2]
            labels[:, :, k] = (pos & nb_pos & (match == nb_match)).astype(np.uint8)
        cross.append(labels)
    return within, cross


def encode(words: list[WordBox], pyramid: LayerPyramid) -> GroundTruthMaps:
    """Full groundtruth maps for a scene: labels, matches, offsets, links."""
    by_id = {}
    for word in words:
        if word.word_id in by_id:
            raise ValueError(f"duplicate word id {word.word_id}")
        by_id[word.word_id] = word
    seg_label, match_id = label_default_boxes(words, pyramid)
    within, cross = label_links(seg_label, match_id, pyramid)
    offsets = []
    for li, spec in enumerate(pyramid.layers):
        layer_offsets = np.zeros((spec.height, spec.width, 5))
        for y, x in np.argwhere(seg_label[li]):
            idx = GridIndex(spec.index, int(x), int(y))
            box = default_box(pyramid, idx)
            word = by_id[int(match_id[li][y, x])]
            segment = groundtruth_segment(box, word.rect)
            layer_offsets[y, x] = encode_offsets(segment, box)
        offsets.append(layer_offsets)
    return GroundTruthMaps(
        pyramid=pyramid,
        seg_label=seg_label,
        match_id=match_id,
        offsets=offsets,
        within_link_label=within,
        cross_link_label=cross,
    )
