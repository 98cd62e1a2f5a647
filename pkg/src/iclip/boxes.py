"""Axis-aligned box helpers. Boxes are (x1, y1, x2, y2) in pixels."""

from __future__ import annotations

from typing import Sequence

Box = tuple[float, float, float, float]


def area(box: Sequence[float]) -> float:
    x1, y1, x2, y2 = box
    return max(0.0, x2 - x1) * max(0.0, y2 - y1)


def iou(a: Sequence[float], b: Sequence[float]) -> float:
    """Intersection over union of two continuous rectangles.

    A zero-area box contributes no overlap, so the result is 0.
    """
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = area(a) + area(b) - inter
    return inter / union if union > 0 else 0.0


def check_box(box: Sequence[float]) -> Box:
    if len(box) != 4:
        raise ValueError(f"box needs 4 coordinates, got {len(box)}")
    x1, y1, x2, y2 = (float(v) for v in box)
    if not x1 < x2:
        raise ValueError(f"x1 ({x1}) must be < x2 ({x2})")
    if not y1 < y2:
        raise ValueError(f"y1 ({y1}) must be < y2 ({y2})")
    return (x1, y1, x2, y2)
