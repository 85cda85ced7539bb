"""Planar polygon primitives: areas, canonical ordering, rasterization, rotation.

Rings are ordered 2-D vertex lists in pixel coordinates, implicitly closed.
The canonical form used throughout the package is counter-clockwise
orientation with the start vertex at the lexicographic minimum (y, then x),
which makes target token sequences well defined without a dedicated
first-vertex predictor.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

EPS = 1e-9


class GeometryError(ValueError):
    """Base class for polygon validity errors."""


class InvalidRingError(GeometryError):
    """Ring violates a structural invariant (too few vertices, NaN, ...)."""


class DegenerateRingError(GeometryError):
    """Ring encloses (numerically) zero area."""


class Point2(NamedTuple):
    x: float
    y: float


class PolygonRing:
    """An implicitly closed polygon, stored as a read-only (V, 2) float array."""

    __slots__ = ("vertices", "_simple")

    def __init__(self, vertices) -> None:
        v = np.asarray(vertices, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 2:
            raise InvalidRingError(f"expected (V, 2) vertex array, got shape {v.shape}")
        if v.shape[0] < 3:
            raise InvalidRingError(f"ring needs >= 3 vertices, got {v.shape[0]}")
        if not np.all(np.isfinite(v)):
            raise InvalidRingError("ring contains non-finite coordinates")
        dup = np.max(np.abs(v - np.roll(v, -1, axis=0)), axis=1) < EPS
        if np.any(dup):
            raise InvalidRingError("ring has equal consecutive vertices")
        v.setflags(write=False)
        self.vertices = v
        self._simple: bool | None = None

    def __len__(self) -> int:
        return self.vertices.shape[0]

    def __eq__(self, other) -> bool:
        return isinstance(other, PolygonRing) and np.array_equal(self.vertices, other.vertices)

    def __repr__(self) -> str:
        return f"PolygonRing({self.vertices.tolist()!r})"

    @property
    def is_valid(self) -> bool:
        """Simple (non-self-intersecting) and non-degenerate."""
        try:
            if abs(signed_area(self)) < EPS:
                return False
        except GeometryError:
            return False
        return self.is_simple

    @property
    def is_simple(self) -> bool:
        if self._simple is None:
            self._simple = _is_simple(self.vertices)
        return self._simple


@dataclass
class BinaryMask:
    """Row-major occupancy grid; ``bits[i, j]`` covers pixel centre (j+0.5, i+0.5)."""

    width: int
    height: int
    bits: np.ndarray
    clipped: bool = field(default=False)

    def popcount(self) -> int:
        return int(self.bits.sum())


def signed_area(ring: PolygonRing) -> float:
    """Shoelace area: positive for CCW rings, negative for CW."""
    v = ring.vertices
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def perimeter(ring: PolygonRing) -> float:
    v = ring.vertices
    return float(np.sum(np.hypot(*(np.roll(v, -1, axis=0) - v).T)))


def _dedupe_consecutive(v: np.ndarray) -> np.ndarray:
    keep = np.max(np.abs(v - np.roll(v, 1, axis=0)), axis=1) >= EPS
    if keep.all():
        return v
    return v[keep]


def canonicalize(ring: PolygonRing) -> PolygonRing:
    """CCW orientation, start vertex at the lexicographic minimum (y, then x).

    Repeated consecutive vertices are dropped first. Idempotent. Raises
    DegenerateRingError when the cleaned ring has (near-)zero area.
    """
    v = _dedupe_consecutive(np.asarray(ring.vertices, dtype=np.float64))
    if v.shape[0] < 3:
        raise DegenerateRingError("fewer than 3 distinct vertices")
    area = 0.5 * float(np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1]))
    if abs(area) < EPS:
        raise DegenerateRingError(f"ring area {area:.3g} below {EPS:g}")
    if area < 0:
        v = v[np.r_[0, np.arange(v.shape[0] - 1, 0, -1)]]
    start = int(np.lexsort((v[:, 0], v[:, 1]))[0])
    return PolygonRing(np.roll(v, -start, axis=0))


def rotate_ring(ring: PolygonRing, degrees: float, center=(0.0, 0.0)) -> PolygonRing:
    """Rotate every vertex CCW by ``degrees`` about ``center``."""
    theta = np.deg2rad(degrees)
    c, s = np.cos(theta), np.sin(theta)
    rot = np.array([[c, -s], [s, c]])
    ctr = np.asarray(center, dtype=np.float64)
    return PolygonRing((ring.vertices - ctr) @ rot.T + ctr)


def rasterize(ring: PolygonRing, resolution: int) -> BinaryMask:
    """Scanline even-odd fill sampled at pixel centres.

    Pixel (i, j) is set iff centre (j+0.5, i+0.5) lies inside the ring.
    Coordinates outside [0, resolution] are clipped and flagged.
    """
    if resolution < 1:
        raise ValueError("resolution must be positive")
    v = ring.vertices
    clipped = bool(np.any(v < 0) or np.any(v > resolution))
    bits = np.zeros((resolution, resolution), dtype=bool)

    p = v
    q = np.roll(v, -1, axis=0)
    ys = np.arange(resolution, dtype=np.float64) + 0.5  # scanline heights
    # Half-open crossing rule: an edge is crossed when min(y) <= scan < max(y),
    # which counts shared vertices exactly once and skips horizontal edges.
    py, qy = p[:, 1][:, None], q[:, 1][:, None]
    crosses = ((py <= ys) & (ys < qy)) | ((qy <= ys) & (ys < py))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (ys - py) / (qy - py)
        xs = p[:, 0][:, None] + t * (q[:, 0][:, None] - p[:, 0][:, None])
    xs = np.where(crosses, xs, np.inf)
    xs.sort(axis=0)  # non-crossings sort to the back as +inf

    # Even-odd spans per row: fill j where x_even <= j+0.5 < x_odd.
    diff = np.zeros((resolution, resolution + 1), dtype=np.int32)
    n_edges = v.shape[0]
    for k in range(0, n_edges - 1, 2):
        a, b = xs[k], xs[k + 1]
        valid = np.isfinite(b)
        if not np.any(valid):
            break
        ja = np.clip(np.ceil(a[valid] - 0.5), 0, resolution).astype(np.intp)
        jb = np.clip(np.ceil(b[valid] - 0.5), 0, resolution).astype(np.intp)
        rows = np.nonzero(valid)[0]
        np.add.at(diff, (rows, ja), 1)
        np.add.at(diff, (rows, jb), -1)
    bits = np.cumsum(diff[:, :-1], axis=1) > 0
    return BinaryMask(width=resolution, height=resolution, bits=bits, clipped=clipped)


def _is_simple(v: np.ndarray) -> bool:
    """No two non-adjacent edges intersect; adjacent edges meet only at the joint."""
    n = v.shape[0]
    segs = [(v[i], v[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            adjacent = (j == i + 1) or (i == 0 and j == n - 1)
            if adjacent:
                if _segments_overlap_collinear(*segs[i], *segs[j]):
                    return False
            elif _segments_intersect(*segs[i], *segs[j]):
                return False
    return True


def _orient(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _on_segment(a, b, c) -> bool:
    return (
        min(a[0], b[0]) - EPS <= c[0] <= max(a[0], b[0]) + EPS
        and min(a[1], b[1]) - EPS <= c[1] <= max(a[1], b[1]) + EPS
    )


def _segments_intersect(p1, p2, p3, p4) -> bool:
    d1 = _orient(p3, p4, p1)
    d2 = _orient(p3, p4, p2)
    d3 = _orient(p1, p2, p3)
    d4 = _orient(p1, p2, p4)
    if ((d1 > EPS and d2 < -EPS) or (d1 < -EPS and d2 > EPS)) and (
        (d3 > EPS and d4 < -EPS) or (d3 < -EPS and d4 > EPS)
    ):
        return True
    for d, (a, b, c) in [(d1, (p3, p4, p1)), (d2, (p3, p4, p2)), (d3, (p1, p2, p3)), (d4, (p1, p2, p4))]:
        if abs(d) <= EPS and _on_segment(a, b, c):
            return True
    return False


def _segments_overlap_collinear(p1, p2, p3, p4) -> bool:
    """Adjacent edges fold back onto each other (collinear with overlap)."""
    if abs(_orient(p1, p2, p3)) > EPS or abs(_orient(p1, p2, p4)) > EPS:
        return False
    # Project onto the dominant axis and look for more than a point of contact.
    axis = 0 if abs(p2[0] - p1[0]) >= abs(p2[1] - p1[1]) else 1
    lo1, hi1 = sorted((p1[axis], p2[axis]))
    lo2, hi2 = sorted((p3[axis], p4[axis]))
    return min(hi1, hi2) - max(lo1, lo2) > EPS
