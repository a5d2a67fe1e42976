"""Planar and 3D polygon kernel: normals, roof angles, flattening, areas, clipping.

All coordinates are metres in a projected planar CRS. Polygons carry only an
exterior ring; holes are not supported.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np
import shapely
from shapely.geometry import Polygon as _ShapelyPolygon

from .errors import DegeneratePolygon, InvalidGeometry

FLAT_TILT_DEG = 5.0
PLANE_TOLERANCE_M = 0.05
SLIVER_AREA_M2 = 0.05
MIN_FLAT_AREA_M2 = 1e-9
NEWELL_EPS = 1e-12
ON_EDGE_EPS = 1e-12

Point2 = tuple[float, float]
Point3 = tuple[float, float, float]


def _strip_ring(coords, dim):
    pts = [tuple(float(c) for c in p) for p in coords]
    if any(len(p) != dim for p in pts):
        raise ValueError(f"expected {dim}-dimensional vertices")
    if any(not math.isfinite(c) for p in pts for c in p):
        raise ValueError("non-finite coordinate")
    # implicit closure; also drop zero-length edges
    out = []
    for p in pts:
        if not out or p != out[-1]:
            out.append(p)
    while len(out) > 1 and out[0] == out[-1]:
        out.pop()
    if len(out) < 3:
        raise DegeneratePolygon(f"ring needs at least 3 distinct vertices, got {len(out)}")
    return tuple(out)


def _signed_area(ring) -> float:
    xy = np.asarray(ring, dtype=float)[:, :2]
    x = xy[:, 0] - xy[:, 0].mean()
    y = xy[:, 1] - xy[:, 1].mean()
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


@dataclass(frozen=True)
class Polygon2:
    """Simple polygon without holes; stored counter-clockwise."""

    exterior: tuple[Point2, ...]

    def __post_init__(self):
        ring = _strip_ring(self.exterior, 2)
        if _signed_area(ring) < 0:
            ring = (ring[0],) + tuple(reversed(ring[1:]))
        object.__setattr__(self, "exterior", ring)

    def __len__(self):
        return len(self.exterior)

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        xs = [p[0] for p in self.exterior]
        ys = [p[1] for p in self.exterior]
        return min(xs), min(ys), max(xs), max(ys)

    @cached_property
    def is_simple(self) -> bool:
        return _ring_is_simple(np.asarray(self.exterior, dtype=float))


@dataclass(frozen=True)
class Polygon3:
    ring: tuple[Point3, ...]

    def __post_init__(self):
        object.__setattr__(self, "ring", _strip_ring(self.ring, 3))

    def __len__(self):
        return len(self.ring)


class UnitNormal(NamedTuple):
    nx: float
    ny: float
    nz: float


def newell_vector(p: Polygon3) -> np.ndarray:
    """Unnormalised Newell normal; its length is twice the polygon area."""
    v = np.asarray(p.ring, dtype=float)
    v = v - v.mean(axis=0)
    w = np.roll(v, -1, axis=0)
    x, y, z = v.T
    x1, y1, z1 = w.T
    return np.array([
        np.sum((y - y1) * (z + z1)),
        np.sum((z - z1) * (x + x1)),
        np.sum((x - x1) * (y + y1)),
    ])


def newell_normal(p: Polygon3) -> UnitNormal:
    n = newell_vector(p)
    mag = float(np.linalg.norm(n))
    if mag < NEWELL_EPS:
        raise DegeneratePolygon("polygon has no well-defined plane (zero Newell vector)")
    n = n / mag
    if n[2] < 0:
        n = -n
    return UnitNormal(float(n[0]), float(n[1]), float(n[2]))


def area_3d(p: Polygon3) -> float:
    return 0.5 * float(np.linalg.norm(newell_vector(p)))


def planarity_deviation(p: Polygon3) -> float:
    """Largest vertex distance (m) from the least-squares plane."""
    v = np.asarray(p.ring, dtype=float)
    v = v - v.mean(axis=0)
    _, _, vt = np.linalg.svd(v, full_matrices=False)
    return float(np.max(np.abs(v @ vt[-1])))


def tilt_deg(n: UnitNormal) -> float:
    # atan2 form of arccos(nz); stays accurate near 0 and 90 degrees
    return math.degrees(math.atan2(math.hypot(n.nx, n.ny), abs(n.nz)))


def azimuth_deg(n: UnitNormal, flat_tilt: float = FLAT_TILT_DEG) -> float | None:
    """Downslope bearing clockwise from north, or None for a flat surface."""
    if tilt_deg(n) < flat_tilt:
        return None
    az = math.degrees(math.atan2(n.nx, n.ny)) % 360.0
    return 0.0 if az >= 360.0 else az


def normal_from_angles(tilt: float, azimuth: float) -> UnitNormal:
    t = math.radians(tilt)
    a = math.radians(azimuth)
    return UnitNormal(math.sin(t) * math.sin(a), math.sin(t) * math.cos(a), math.cos(t))


def flatten(p: Polygon3) -> Polygon2:
    ring2 = [(x, y) for x, y, _ in p.ring]
    try:
        flat = Polygon2(tuple(ring2))
    except DegeneratePolygon:
        raise DegeneratePolygon("projection collapses to fewer than 3 vertices") from None
    if area_2d(flat) < MIN_FLAT_AREA_M2:
        raise DegeneratePolygon("projected area is zero (near-vertical surface)")
    return flat


def area_2d(p: Polygon2) -> float:
    return abs(_signed_area(p.exterior))


def _ring_is_simple(xy: np.ndarray) -> bool:
    n = len(xy)
    a = xy
    b = np.roll(xy, -1, axis=0)
    d = b - a

    # consecutive edges folding back onto each other
    d_next = np.roll(d, -1, axis=0)
    cross_adj = d[:, 0] * d_next[:, 1] - d[:, 1] * d_next[:, 0]
    dot_adj = np.einsum("ij,ij->i", d, d_next)
    if np.any((cross_adj == 0) & (dot_adj < 0)):
        return False
    if n == 3:
        return abs(_signed_area(xy)) > 0

    i, j = np.triu_indices(n, k=2)
    keep = ~((i == 0) & (j == n - 1))
    i, j = i[keep], j[keep]

    # bounding-box prefilter
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    hit = np.all(lo[i] <= hi[j], axis=1) & np.all(lo[j] <= hi[i], axis=1)
    i, j = i[hit], j[hit]
    if len(i) == 0:
        return True

    def orient(p, q, r):
        return np.sign((q[:, 0] - p[:, 0]) * (r[:, 1] - p[:, 1]) - (q[:, 1] - p[:, 1]) * (r[:, 0] - p[:, 0]))

    p1, q1, p2, q2 = a[i], b[i], a[j], b[j]
    o1 = orient(p1, q1, p2)
    o2 = orient(p1, q1, q2)
    o3 = orient(p2, q2, p1)
    o4 = orient(p2, q2, q1)
    proper = (o1 * o2 <= 0) & (o3 * o4 <= 0)
    # all-collinear pairs pass the sign test even when apart; boxes already overlap,
    # so collinear + overlapping boxes means the segments touch
    return not np.any(proper)


def _to_shapely(p: Polygon2):
    return _ShapelyPolygon(p.exterior)


def intersect(a: Polygon2, b: Polygon2, min_area: float = SLIVER_AREA_M2) -> list[Polygon2]:
    """Pieces of ``a ∩ b`` with area at least ``min_area``, sorted by position."""
    for name, p in (("first", a), ("second", b)):
        if not p.is_simple:
            raise InvalidGeometry(f"{name} polygon is not simple")
    ax0, ay0, ax1, ay1 = a.bounds
    bx0, by0, bx1, by1 = b.bounds
    if ax1 < bx0 or bx1 < ax0 or ay1 < by0 or by1 < ay0:
        return []
    res = shapely.intersection(_to_shapely(a), _to_shapely(b))
    parts = getattr(res, "geoms", [res])
    pieces = []
    for g in parts:
        if g.geom_type != "Polygon" or g.is_empty or g.area < min_area:
            continue
        # intersections of hole-free simple polygons are hole-free
        pieces.append(Polygon2(tuple(g.exterior.coords[:-1])))
    pieces.sort(key=lambda q: (q.bounds[0], q.bounds[1], q.bounds[2], q.bounds[3]))
    return pieces


def point_in_polygon(pt: Sequence[float], p: Polygon2) -> bool:
    """Even-odd ray casting; points on the boundary count as inside."""
    x, y = float(pt[0]), float(pt[1])
    ring = p.exterior
    n = len(ring)
    inside = False
    for k in range(n):
        x1, y1 = ring[k]
        x2, y2 = ring[(k + 1) % n]
        cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1)
        if (abs(cross) <= ON_EDGE_EPS and min(x1, x2) <= x <= max(x1, x2)
                and min(y1, y2) <= y <= max(y1, y2)):
            return True
        if (y1 > y) != (y2 > y):
            xi = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < xi:
                inside = not inside
    return inside
