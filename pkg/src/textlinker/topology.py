"""Feature-layer grid geometry: strides, default boxes, and neighbor systems.

Six prediction layers halve in resolution from one to the next.  Each grid
cell anchors one square default box whose side grows with the stride, and
cells are wired to 8-connected neighbors on their own layer plus 4 aligned
cells on the next finer layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InvalidSizeError
from .geometry import RotatedRect

__all__ = [
    "CROSS_OFFSETS",
    "DEFAULT_GAMMA",
    "DEFAULT_STRIDES",
    "GridIndex",
    "LayerPyramid",
    "LayerSpec",
    "NUM_LAYERS",
    "SIZE_MULTIPLE",
    "WITHIN_OFFSETS",
    "build_pyramid",
    "cross_layer_neighbors",
    "default_box",
    "nearest_valid_size",
    "within_layer_neighbors",
]

NUM_LAYERS = 6
SIZE_MULTIPLE = 128
DEFAULT_STRIDES = (8, 16, 32, 64, 128, 256)
DEFAULT_GAMMA = 1.5

# Within-layer neighbor offsets as (dy, dx), row-major with the center
# excluded.  This order is shared by the link channel layout, so it must
# never change.  Slot k and slot 7-k point in opposite directions.
WITHIN_OFFSETS = (
    (-1, -1), (-1, 0), (-1, 1),
    (0, -1), (0, 1),
    (1, -1), (1, 0), (1, 1),
)

# Cross-layer neighbor offsets as (dy, dx) added to (2y, 2x) on the finer
# layer; also the link channel order.
CROSS_OFFSETS = ((0, 0), (0, 1), (1, 0), (1, 1))


@dataclass(frozen=True)
class LayerSpec:
    """Grid geometry of one prediction layer."""

    index: int  # 1-based, 1 is the finest layer
    width: int  # cells
    height: int  # cells
    stride: int  # pixels per cell
    box_size: float  # default-box side in pixels

    @property
    def cells(self) -> int:
        return self.width * self.height


@dataclass(frozen=True)
class GridIndex:
    """A cell address: layer index plus (column, row)."""

    layer: int
    x: int
    y: int


@dataclass(frozen=True)
class LayerPyramid:
    """The six-layer grid derived from one input size."""

    input_w: int
    input_h: int
    layers: tuple[LayerSpec, ...]

    def layer(self, index: int) -> LayerSpec:
        """Look up a layer by its 1-based index."""
        if not 1 <= index <= len(self.layers):
            raise IndexError(f"layer index {index} out of range 1..{len(self.layers)}")
        return self.layers[index - 1]

    @property
    def strides(self) -> tuple[int, ...]:
        return tuple(spec.stride for spec in self.layers)

    @property
    def gamma(self) -> float:
        return self.layers[0].box_size / self.layers[0].stride

    @property
    def total_cells(self) -> int:
        return sum(spec.cells for spec in self.layers)


def nearest_valid_size(w: float, h: float) -> tuple[int, int]:
    """Round each dimension to the nearest positive multiple of 128 (ties up)."""

    def _round(v: float) -> int:
        if v < SIZE_MULTIPLE / 2:
            raise InvalidSizeError(f"dimension {v} is too small to resize to a valid size")
        return SIZE_MULTIPLE * max(1, math.floor(v / SIZE_MULTIPLE + 0.5))

    return _round(w), _round(h)


def build_pyramid(
    input_w: int,
    input_h: int,
    strides: tuple[int, ...] = DEFAULT_STRIDES,
    gamma: float = DEFAULT_GAMMA,
) -> LayerPyramid:
    """Build the layer pyramid for a given input size.

    Both dimensions must be divisible by 128 and by every stride, which keeps
    all map sizes integral and guarantees that each layer is exactly twice
    the size of the next (the property cross-layer links rely on).
    """
    if len(strides) != NUM_LAYERS:
        raise InvalidSizeError(f"expected {NUM_LAYERS} strides, got {len(strides)}")
    for a, b in zip(strides, strides[1:]):
        if b != 2 * a:
            raise InvalidSizeError(f"strides must double layer to layer, got {strides}")
    if gamma <= 0:
        raise InvalidSizeError(f"gamma must be positive, got {gamma}")
    layers = []
    for i, stride in enumerate(strides):
        for dim in (input_w, input_h):
            if dim % SIZE_MULTIPLE != 0:
                raise InvalidSizeError(
                    f"input size {input_w}x{input_h} is not divisible by {SIZE_MULTIPLE}"
                )
            if dim % stride != 0:
                raise InvalidSizeError(
                    f"input size {input_w}x{input_h} is not divisible by stride {stride}"
                )
        width = input_w // stride
        # a_l = gamma * w_I / w_l, which reduces to gamma * stride.
        layers.append(
            LayerSpec(
                index=i + 1,
                width=width,
                height=input_h // stride,
                stride=stride,
                box_size=gamma * (input_w / width),
            )
        )
    return LayerPyramid(int(input_w), int(input_h), tuple(layers))


def _check_index(pyramid: LayerPyramid, idx: GridIndex) -> LayerSpec:
    spec = pyramid.layer(idx.layer)
    if not (0 <= idx.x < spec.width and 0 <= idx.y < spec.height):
        raise IndexError(
            f"cell ({idx.x}, {idx.y}) out of bounds for layer {idx.layer} "
            f"({spec.width}x{spec.height})"
        )
    return spec


def default_box(pyramid: LayerPyramid, idx: GridIndex) -> RotatedRect:
    """The square default box anchored at a grid cell (axis-aligned)."""
    spec = _check_index(pyramid, idx)
    cx = (pyramid.input_w / spec.width) * (idx.x + 0.5)
    cy = (pyramid.input_h / spec.height) * (idx.y + 0.5)
    return RotatedRect(cx, cy, spec.box_size, spec.box_size, 0.0)


def within_layer_neighbors(idx: GridIndex, spec: LayerSpec) -> list[GridIndex]:
    """The 8-connected neighbors of a cell, clipped to the map bounds."""
    if not (0 <= idx.x < spec.width and 0 <= idx.y < spec.height):
        raise IndexError(f"cell ({idx.x}, {idx.y}) out of bounds")
    neighbors = []
    for dy, dx in WITHIN_OFFSETS:
        nx = idx.x + dx
        ny = idx.y + dy
        if 0 <= nx < spec.width and 0 <= ny < spec.height:
            neighbors.append(GridIndex(idx.layer, nx, ny))
    return neighbors

def cross_layer_neighbors(idx: GridIndex, pyramid: LayerPyramid) -> list[GridIndex]:
    """The 4 cells on the next finer layer covered by this cell.

    Layer 1 has no finer layer, so asking for its cross-layer neighbors is an
    error.  The double-size relation between consecutive layers guarantees
    the result is always in bounds.
    """
    if idx.layer < 2:
        raise ValueError("the finest layer has no preceding layer for cross links")
    _check_index(pyramid, idx)
    return [
        GridIndex(idx.layer - 1, 2 * idx.x + dx, 2 * idx.y + dy)
        for dy, dx in CROSS_OFFSETS
    ]
