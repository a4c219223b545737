"""
Axis-aligned box arithmetic: areas, intersections, IoU and GIoU.

All functions are pure and operate on corner-form ``BBox`` values.
"""
from typing import Optional

from .exceptions import DegenerateBoxError
from .models import BBox


def area(b: BBox) -> float:
    """Area of a box; 0 for zero-width or zero-height boxes."""
    return (b.x_max - b.x_min) * (b.y_max - b.y_min)


def intersection(a: BBox, b: BBox) -> Optional[BBox]:
    """Overlapping rectangle of two boxes.

    Returns None when the boxes are disjoint or only touch along an edge or
    at a point, i.e. whenever the overlap has zero area.
    """
    x_min = max(a.x_min, b.x_min)
    y_min = max(a.y_min, b.y_min)
    x_max = min(a.x_max, b.x_max)
    y_max = min(a.y_max, b.y_max)
    if x_max <= x_min or y_max <= y_min:
        return None
    return BBox(x_min=x_min, y_min=y_min, x_max=x_max, y_max=y_max)


def enclosing(a: BBox, b: BBox) -> BBox:
    """Smallest axis-aligned box containing both boxes."""
    return BBox(
        x_min=min(a.x_min, b.x_min),
        y_min=min(a.y_min, b.y_min),
        x_max=max(a.x_max, b.x_max),
        y_max=max(a.y_max, b.y_max),
    )


def _intersection_area(a: BBox, b: BBox) -> float:
    w = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    h = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if w <= 0 or h <= 0:
        return 0.0
    return w * h


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union, in [0, 1]. Defined as 0 when the union is empty."""
    inter = _intersection_area(a, b)
    union = area(a) + area(b) - inter
    if union <= 0:
        return 0.0
    return inter / union


def giou(a: BBox, b: BBox) -> float:
    """Generalized IoU, in (-1, 1].

    GIoU = IoU - (|C| - |A u B|) / |C| with C the enclosing box.

    Raises:
        DegenerateBoxError: both boxes have zero area.
    """
    area_a = area(a)
    area_b = area(b)
    if area_a <= 0 and area_b <= 0:
        raise DegenerateBoxError(
            f"GIoU undefined for two zero-area boxes: {a.as_tuple()} and {b.as_tuple()}"
        )
    inter = _intersection_area(a, b)
    union = area_a + area_b - inter
    hull = (max(a.x_max, b.x_max) - min(a.x_min, b.x_min)) * (max(a.y_max, b.y_max) - min(a.y_min, b.y_min))
    return inter / union - (hull - union) / hull
