"""Oriented-box overlap and point-to-polyline distance."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np


def box_corners(x: float, y: float, heading: float, length: float, width: float) -> np.ndarray:
    c, s = math.cos(heading), math.sin(heading)
    hl, hw = length / 2, width / 2
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([x, y])


def boxes_overlap(a: Sequence[float], b: Sequence[float]) -> bool:
    """Separating-axis test for two oriented rectangles ``(x, y, heading, length, width)``.

    Touching boxes count as overlapping.
    """
    ca, cb = box_corners(*a), box_corners(*b)
    for heading in (a[2], b[2]):
        for axis in ((math.cos(heading), math.sin(heading)), (-math.sin(heading), math.cos(heading))):
            pa, pb = ca @ axis, cb @ axis
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


def collision_check(ego_box: Sequence[float], agent_boxes: Sequence[Sequence[float]]) -> bool:
    return any(boxes_overlap(ego_box, b) for b in agent_boxes)


def distance_to_polyline(point: np.ndarray, polyline: np.ndarray) -> float:
    """Euclidean distance from ``point`` [2] to the segments of ``polyline`` [n, >=2]."""
    pts = np.asarray(polyline, dtype=np.float64)[:, :2]
    p = np.asarray(point, dtype=np.float64)[:2]
    if len(pts) == 1:
        return float(np.hypot(*(p - pts[0])))
    a, b = pts[:-1], pts[1:]
    ab = b - a
    denom = np.einsum("ij,ij->i", ab, ab)
    t = np.where(denom > 0, np.einsum("ij,ij->i", p - a, ab) / np.where(denom > 0, denom, 1.0), 0.0)
    proj = a + np.clip(t, 0.0, 1.0)[:, None] * ab
    return float(np.min(np.hypot(*(p - proj).T)))
