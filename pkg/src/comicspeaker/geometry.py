"""Axis-aligned rectangle arithmetic in page pixel coordinates (y grows downward)."""

from __future__ import annotations

import math
from dataclasses import dataclass


class DegenerateBoxError(ValueError):
    pass


@dataclass(frozen=True)
class BBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"non-finite box coordinates: {coords}")
        if min(coords) < 0:
            raise ValueError(f"negative box coordinates: {coords}")
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"inverted box: {coords}")

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> "BBox":
        return cls(x, y, x + w, y + h)

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    def translate(self, dx: float, dy: float) -> "BBox":
        return BBox(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)

    def scale(self, factor: float) -> "BBox":
        return BBox(self.x_min * factor, self.y_min * factor, self.x_max * factor, self.y_max * factor)

    def clamp(self, width: float, height: float) -> "BBox":
        x0 = min(max(self.x_min, 0.0), width)
        y0 = min(max(self.y_min, 0.0), height)
        x1 = min(max(self.x_max, 0.0), width)
        y1 = min(max(self.y_max, 0.0), height)
        return BBox(x0, y0, x1, y1)


def centroid(b: BBox) -> tuple[float, float]:
    return ((b.x_min + b.x_max) / 2, (b.y_min + b.y_max) / 2)


def centroid_distance(a: BBox, b: BBox) -> float:
    ax, ay = centroid(a)
    bx, by = centroid(b)
    return math.hypot(ax - bx, ay - by)


def intersection_area(a: BBox, b: BBox) -> float:
    # Touching edges give a zero-width overlap, not an error.
    w = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    h = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if w <= 0 or h <= 0:
        return 0.0
    return w * h


def iou(a: BBox, b: BBox) -> float:
    inter = intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    return inter / (a.area + b.area - inter)


def overlap_fraction(inner: BBox, outer: BBox) -> float:
    """Share of ``inner``'s area that lies inside ``outer``.

    Raises DegenerateBoxError when ``inner`` has zero area.
    """
    if inner.area <= 0:
        raise DegenerateBoxError(f"degenerate box: {inner.as_list()}")
    return intersection_area(inner, outer) / inner.area
