"""Rotated-rectangle primitives: corners, overlap measures, rotations, hulls.

Everything operates in raster coordinates (+x right, +y down) with angles in
radians measured from the +x axis toward +y.  A rectangle is identical to its
half-turn, so angles are kept in the canonical range (-pi/2, pi/2].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "AlignedBox",
    "Quad",
    "RotatedRect",
    "axis_aligned_bbox",
    "contains_point",
    "contains_points",
    "jaccard",
    "min_area_rect",
    "normalize_angle",
    "orient_width_along",
    "polygon_area",
    "rotate_about",
    "rotated_iou",
    "to_quad",
]

# Intersections thinner than this are treated as empty.
_DEGENERATE_AREA = 1e-12

_HALF_PI = math.pi / 2.0


def normalize_angle(theta: float) -> float:
    """Reduce an angle modulo pi into the canonical (-pi/2, pi/2] range."""
    t = math.fmod(theta, math.pi)
    if t > _HALF_PI:
        t -= math.pi
    elif t <= -_HALF_PI:
        t += math.pi
    return t


@dataclass(frozen=True)
class RotatedRect:
    """Oriented rectangle: center (x, y), width w along theta, height h across it."""

    x: float
    y: float
    w: float
    h: float
    theta: float = 0.0

    def __post_init__(self) -> None:
        values = (self.x, self.y, self.w, self.h, self.theta)
        if not all(math.isfinite(float(v)) for v in values):
            raise ValueError(f"rectangle fields must be finite, got {values}")
        if self.w <= 0.0 or self.h <= 0.0:
            raise ValueError(f"rectangle sides must be positive, got w={self.w} h={self.h}")
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "w", float(self.w))
        object.__setattr__(self, "h", float(self.h))
        object.__setattr__(self, "theta", normalize_angle(float(self.theta)))

    @property
    def area(self) -> float:
        return self.w * self.h

    def fields(self) -> tuple[float, float, float, float, float]:
        return (self.x, self.y, self.w, self.h, self.theta)


def polygon_area(vertices: Sequence[tuple[float, float]]) -> float:
    """Signed shoelace area; positive for our canonical vertex order."""
    total = 0.0
    n = len(vertices)
    for i in range(n):
        x0, y0 = vertices[i]
        x1, y1 = vertices[(i + 1) % n]
        total += x0 * y1 - x1 * y0
    return total / 2.0


@dataclass(frozen=True)
class Quad:
    """Convex quadrilateral with vertices in positive-orientation order."""

    vertices: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        if len(self.vertices) != 4:
            raise ValueError("a quad needs exactly 4 vertices")
        pts = tuple((float(x), float(y)) for x, y in self.vertices)
        object.__setattr__(self, "vertices", pts)
        area = polygon_area(pts)
        if area <= 0.0:
            raise ValueError("quad vertices must have positive orientation")
        # Convexity: all corner cross products on the same side (tolerance
        # proportional to the quad area to absorb rounding).
        tol = -1e-9 * area
        for i in range(4):
            ax, ay = pts[i]
            bx, by = pts[(i + 1) % 4]
            cx, cy = pts[(i + 2) % 4]
            cross = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
            if cross < tol:
                raise ValueError("quad vertices must form a convex polygon")

    @property
    def area(self) -> float:
        return polygon_area(self.vertices)


def to_quad(rect: RotatedRect) -> Quad:
    """Corner points of a rectangle (positively oriented, starting at (-w/2, -h/2))."""
    c = math.cos(rect.theta)
    s = math.sin(rect.theta)
    hw = rect.w / 2.0
    hh = rect.h / 2.0
    corners = tuple(
        (rect.x + lx * c - ly * s, rect.y + lx * s + ly * c)
        for lx, ly in ((-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh))
    )
    return Quad(corners)


def _clip_convex(subject, clip_poly):
    """Sutherland-Hodgman clip of a convex polygon by a positively oriented one.

    Crossings interpolate on the signed edge distances; when the endpoint
    classifications differ the distances have opposite signs, so the division
    is always well defined (touching and collinear edges included).
    """
    output = list(subject)
    qx, qy = clip_poly[-1]
    for rx, ry in clip_poly:
        if not output:
            break
        ex, ey = rx - qx, ry - qy
        polygon, output = output, []
        sx, sy = polygon[-1]
        sd = ex * (sy - qy) - ey * (sx - qx)
        for px, py in polygon:
            pd = ex * (py - qy) - ey * (px - qx)
            if (pd >= 0.0) != (sd >= 0.0):
                t = sd / (sd - pd)
                output.append((sx + t * (px - sx), sy + t * (py - sy)))
            if pd >= 0.0:
                output.append((px, py))
            sx, sy, sd = px, py, pd
        qx, qy = rx, ry
    return output


def rotated_iou(a: RotatedRect, b: RotatedRect) -> float:
    """Intersection-over-union of two oriented rectangles via convex clipping.

    The arguments are put in a canonical order first, so the result is exactly
    symmetric in (a, b).
    """
    if a == b:
        return 1.0
    if a.fields() > b.fields():
        a, b = b, a
    inter = _clip_convex(to_quad(a).vertices, to_quad(b).vertices)
    if len(inter) < 3:
        return 0.0
    overlap = abs(polygon_area(inter))
    if overlap < _DEGENERATE_AREA:
        return 0.0
    union = a.area + b.area - overlap
    return overlap / union


def rotate_about(rect: RotatedRect, pivot: tuple[float, float], angle: float) -> RotatedRect:
    """Rotate a rectangle about an arbitrary pivot; size is preserved."""
    c = math.cos(angle)
    s = math.sin(angle)
    dx = rect.x - pivot[0]
    dy = rect.y - pivot[1]
    return RotatedRect(
        pivot[0] + dx * c - dy * s,
        pivot[1] + dx * s + dy * c,
        rect.w,
        rect.h,
        rect.theta + angle,
    )


@dataclass(frozen=True)
class AlignedBox:
    """Axis-aligned box, half-open in neither direction (plain extents)."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self) -> None:
        values = (self.xmin, self.ymin, self.xmax, self.ymax)
        if not all(math.isfinite(float(v)) for v in values):
            raise ValueError(f"box extents must be finite, got {values}")
        if self.xmin >= self.xmax or self.ymin >= self.ymax:
            raise ValueError(f"box extents must be ordered, got {values}")

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return ((self.xmin + self.xmax) / 2.0, (self.ymin + self.ymax) / 2.0)


def axis_aligned_bbox(rect: RotatedRect) -> AlignedBox:
    """Tightest axis-aligned box containing the rectangle's corners."""
    xs = []
    ys = []
    for x, y in to_quad(rect).vertices:
        xs.append(x)
        ys.append(y)
    return AlignedBox(min(xs), min(ys), max(xs), max(ys))


def jaccard(a: AlignedBox, b: AlignedBox) -> float:
    """Intersection-over-union of two axis-aligned boxes."""
    iw = min(a.xmax, b.xmax) - max(a.xmin, b.xmin)
    ih = min(a.ymax, b.ymax) - max(a.ymin, b.ymin)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def contains_points(rect: RotatedRect, xs, ys) -> np.ndarray:
    """Vectorized point-in-rectangle test; boundary points count as inside."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    c = math.cos(rect.theta)
    s = math.sin(rect.theta)
    dx = xs - rect.x
    dy = ys - rect.y
    u = dx * c + dy * s
    v = -dx * s + dy * c
    return (np.abs(u) <= rect.w / 2.0) & (np.abs(v) <= rect.h / 2.0)


def contains_point(rect: RotatedRect, x: float, y: float) -> bool:
    """Scalar point-in-rectangle test; boundary points count as inside."""
    c = math.cos(rect.theta)
    s = math.sin(rect.theta)
    dx = x - rect.x
    dy = y - rect.y
    u = dx * c + dy * s
    v = -dx * s + dy * c
    return abs(u) <= rect.w / 2.0 and abs(v) <= rect.h / 2.0


def _convex_hull(points: list[tuple[float, float]]) -> list[tuple[float, float]]:
    """Monotone-chain convex hull in counter-clockwise (positive-area) order."""
    pts = sorted(set(points))
    if len(pts) <= 2:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]


def min_area_rect(points: Sequence[tuple[float, float]]) -> RotatedRect:
    """Smallest-area oriented rectangle covering the points.

    Scans hull edges (the optimal rectangle shares a side direction with one
    of them).  Degenerate inputs (fewer than 3 distinct non-collinear points)
    are rejected.
    """
    pts = [(float(x), float(y)) for x, y in points]
    hull = _convex_hull(pts)
    if len(hull) < 3:
        raise ValueError("min_area_rect needs a point set with positive area")
    best = None
    for i in range(len(hull)):
        x0, y0 = hull[i]
        x1, y1 = hull[(i + 1) % len(hull)]
        theta = math.atan2(y1 - y0, x1 - x0)
        c = math.cos(theta)
        s = math.sin(theta)
        us = [px * c + py * s for px, py in hull]
        vs = [-px * s + py * c for px, py in hull]
        umin, umax = min(us), max(us)
        vmin, vmax = min(vs), max(vs)
        area = (umax - umin) * (vmax - vmin)
        if best is None or area < best[0]:
            best = (area, theta, umin, umax, vmin, vmax)
    _, theta, umin, umax, vmin, vmax = best
    uc = (umin + umax) / 2.0
    vc = (vmin + vmax) / 2.0
    c = math.cos(theta)
    s = math.sin(theta)
    return RotatedRect(
        uc * c - vc * s,
        uc * s + vc * c,
        umax - umin,
        vmax - vmin,
        theta,
    )


def orient_width_along(rect: RotatedRect, direction: tuple[float, float]) -> RotatedRect:
    """Pick the (w, h, theta) reading whose width axis best tracks `direction`.

    A rectangle has two equivalent parametrizations (sides swapped, theta
    offset by pi/2); the one more parallel to the given direction wins.
    """
    dx, dy = direction
    norm = math.hypot(dx, dy)
    if norm == 0.0:
        return rect
    c = math.cos(rect.theta)
    s = math.sin(rect.theta)
    along_w = abs(c * dx + s * dy)
    along_h = abs(-s * dx + c * dy)
    if along_h > along_w:
        return RotatedRect(rect.x, rect.y, rect.h, rect.w, rect.theta + _HALF_PI)
    return rect
