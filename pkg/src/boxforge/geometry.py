"""Axis-aligned box arithmetic.

Boxes are corner-encoded ``(x1, y1, x2, y2)`` in continuous pixel
coordinates (origin top-left). There is no ``+1`` pixel convention:
``area = (x2 - x1) * (y2 - y1)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, slots=True)
class BBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for name in ("x1", "y1", "x2", "y2"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"BBox.{name} must be finite, got {v!r}")
        if self.x2 < self.x1 or self.y2 < self.y1:
            raise ValueError(f"BBox has negative extent: {self}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def center(self) -> tuple[float, float]:
        return (self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


@dataclass(frozen=True, slots=True)
class ImageShape:
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image shape must be at least 1x1, got {self.width}x{self.height}")

    @property
    def area(self) -> int:
        return self.width * self.height


def area(b: BBox) -> float:
    return (b.x2 - b.x1) * (b.y2 - b.y1)


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union; 0.0 when the union is empty."""
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = area(a) + area(b) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def hflip(b: BBox, shape: ImageShape) -> BBox:
    w = float(shape.width)
    return BBox(w - b.x2, b.y1, w - b.x1, b.y2)


def rescale(b: BBox, sx: float, sy: float) -> BBox:
    if not (sx > 0 and sy > 0):
        raise ValueError(f"scale factors must be positive, got sx={sx}, sy={sy}")
    return BBox(b.x1 * sx, b.y1 * sy, b.x2 * sx, b.y2 * sy)


def clip(b: BBox, shape: ImageShape) -> BBox:
    w, h = float(shape.width), float(shape.height)
    return BBox(
        min(max(b.x1, 0.0), w),
        min(max(b.y1, 0.0), h),
        min(max(b.x2, 0.0), w),
        min(max(b.y2, 0.0), h),
    )


def boxes_to_array(boxes) -> np.ndarray:
    """Stack an iterable of BBox into a contiguous ``(N, 4)`` float64 array."""
    arr = np.array([b.as_tuple() for b in boxes], dtype=np.float64)
    return arr.reshape(-1, 4)
