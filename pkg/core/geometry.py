"""
Geometric Primitives for Face Boxes
===================================

Axis-aligned bounding boxes in continuous pixel coordinates, elliptical
annotations (FDDB style) and the overlap measures used by matching:

- IoU of two boxes, scalar and as a JIT-compiled pairwise matrix
- Tight axis-aligned box of a rotated ellipse

Pixel grids never appear here; they are only used by test oracles.
"""

from __future__ import annotations
from math import cos, sin, sqrt
from typing import Iterable, Tuple
import numpy as np
from numba import jit
from numpy.typing import NDArray
from pydantic import Field, model_validator
from pydantic.dataclasses import dataclass as pydantic_dataclass


BoxArray = NDArray[np.float64]  # shape (n, 4): x_min, y_min, x_max, y_max


@pydantic_dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box with strictly positive area"""

    x_min: float = Field(allow_inf_nan=False, description='Left edge in pixels')
    y_min: float = Field(allow_inf_nan=False, description='Top edge in pixels')
    x_max: float = Field(allow_inf_nan=False, description='Right edge, > x_min')
    y_max: float = Field(allow_inf_nan=False, description='Bottom edge, > y_min')

    @model_validator(mode='after')
    def check_positive_area(self) -> 'BoundingBox':
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f'Box must have positive area, got {self.as_tuple()}')
        return self

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def clamped(self, width: float, height: float) -> BoundingBox:
        """
        Clip the box to the image extent [0, width] x [0, height]. A box with
        nothing left inside the image clips to zero area, which the
        constructor rejects with a ValueError.
        """
        return BoundingBox(
            max(0.0, min(float(width), self.x_min)),
            max(0.0, min(float(height), self.y_min)),
            max(0.0, min(float(width), self.x_max)),
            max(0.0, min(float(height), self.y_max)),
        )

    def contains(self, x: float, y: float) -> bool:
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max


@pydantic_dataclass(frozen=True)
class EllipseAnnotation:
    """Rotated ellipse; angle in radians, measured from the x axis"""

    center_x: float
    center_y: float
    semi_major: float = Field(description='Half the long axis, >= semi_minor')
    semi_minor: float = Field(gt=0, description='Half the short axis')
    angle: float = Field(description='Rotation of the major axis in radians')

    @model_validator(mode='after')
    def check_axis_order(self) -> 'EllipseAnnotation':
        if self.semi_major < self.semi_minor:
            raise ValueError(
                f'semi_major ({self.semi_major}) must be >= semi_minor ({self.semi_minor})'
            )
        return self

    def boundary_point(self, phi: float) -> Tuple[float, float]:
        """Point on the ellipse boundary at parametric angle phi"""
        a, b, theta = self.semi_major, self.semi_minor, self.angle
        x = a * cos(phi) * cos(theta) - b * sin(phi) * sin(theta)
        y = a * cos(phi) * sin(theta) + b * sin(phi) * cos(theta)
        return self.center_x + x, self.center_y + y


def ellipse_to_box(e: EllipseAnnotation) -> BoundingBox:
    """
    Minimal axis-aligned box containing a rotated ellipse.

    half_width  = sqrt(a² cos²θ + b² sin²θ)
    half_height = sqrt(a² sin²θ + b² cos²θ)
    """
    a2 = e.semi_major**2
    b2 = e.semi_minor**2
    c2 = cos(e.angle) ** 2
    s2 = sin(e.angle) ** 2
    half_width = sqrt(a2 * c2 + b2 * s2)
    half_height = sqrt(a2 * s2 + b2 * c2)
    return BoundingBox(
        e.center_x - half_width,
        e.center_y - half_height,
        e.center_x + half_width,
        e.center_y + half_height,
    )


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union; 0 for disjoint boxes"""
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    if iw <= 0:
        return 0.0
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def boxes_to_array(boxes: Iterable[BoundingBox]) -> BoxArray:
    """Stack boxes into a contiguous (n, 4) float64 array"""
    rows = [box.as_tuple() for box in boxes]
    if not rows:
        return np.zeros((0, 4), dtype=np.float64)
    return np.ascontiguousarray(np.array(rows, dtype=np.float64))


@jit(
    'float64[:, :](float64[:, :], float64[:, :])',
    nopython=True,
    cache=True,
)
def iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between two box arrays, same arithmetic as iou()"""
    n_a = boxes_a.shape[0]
    n_b = boxes_b.shape[0]
    out = np.zeros((n_a, n_b))

    for i in range(n_a):
        area_a = (boxes_a[i, 2] - boxes_a[i, 0]) * (boxes_a[i, 3] - boxes_a[i, 1])
        for j in range(n_b):
            iw = min(boxes_a[i, 2], boxes_b[j, 2]) - max(boxes_a[i, 0], boxes_b[j, 0])
            if iw <= 0.0:
                continue
            ih = min(boxes_a[i, 3], boxes_b[j, 3]) - max(boxes_a[i, 1], boxes_b[j, 1])
            if ih <= 0.0:
                continue
            area_b = (boxes_b[j, 2] - boxes_b[j, 0]) * (boxes_b[j, 3] - boxes_b[j, 1])
            inter = iw * ih
            out[i, j] = inter / (area_a + area_b - inter)

    return out
