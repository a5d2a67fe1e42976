"""Rooftop surfaces from the building JSON format, with a static grid index."""
from __future__ import annotations

import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field

from . import geometry as geo
from .errors import DegeneratePolygon, EmptyDataset, ParseError, SchemaError

log = logging.getLogger(__name__)

ADDRESS_FIELDS = ("street", "house_number", "postal_code", "city")


def canonicalize(text: str) -> str:
    return " ".join(str(text).split()).lower()


@dataclass(frozen=True)
class Address:
    street: str
    house_number: str
    postal_code: str
    city: str

    @property
    def canonical_key(self) -> str:
        return "|".join(canonicalize(getattr(self, f)) for f in ADDRESS_FIELDS)


@dataclass(frozen=True)
class RooftopSurface:
    surface_id: str
    building_id: str
    address: Address
    ring3d: geo.Polygon3
    tilt_deg: float
    azimuth_deg: float | None
    footprint: geo.Polygon2
    footprint_area_m2: float

    @property
    def is_flat(self) -> bool:
        return self.azimuth_deg is None

    @classmethod
    def from_ring(cls, surface_id, building_id, address, ring3d, flat_tilt=geo.FLAT_TILT_DEG):
        normal = geo.newell_normal(ring3d)
        footprint = geo.flatten(ring3d)
        return cls(
            surface_id=surface_id,
            building_id=building_id,
            address=address,
            ring3d=ring3d,
            tilt_deg=geo.tilt_deg(normal),
            azimuth_deg=geo.azimuth_deg(normal, flat_tilt),
            footprint=footprint,
            footprint_area_m2=geo.area_2d(footprint),
        )


class GridIndex:
    """Uniform bucket grid over footprint bounding boxes."""

    def __init__(self, boxes, cell_size=None):
        self.boxes = list(boxes)
        if not self.boxes:
            self.cell = 1.0
            self.x0 = self.y0 = 0.0
            self.buckets = {}
            return
        if cell_size is None:
            widths = [max(b[2] - b[0], b[3] - b[1]) for b in self.boxes]
            cell_size = max(sorted(widths)[len(widths) // 2], 1.0)
        self.cell = float(cell_size)
        self.x0 = min(b[0] for b in self.boxes)
        self.y0 = min(b[1] for b in self.boxes)
        self.buckets = defaultdict(list)
        for k, b in enumerate(self.boxes):
            for key in self._keys(b):
                self.buckets[key].append(k)

    def _keys(self, box):
        c = self.cell
        i0 = math.floor((box[0] - self.x0) / c)
        i1 = math.floor((box[2] - self.x0) / c)
        j0 = math.floor((box[1] - self.y0) / c)
        j1 = math.floor((box[3] - self.y0) / c)
        for i in range(i0, i1 + 1):
            for j in range(j0, j1 + 1):
                yield i, j

    def query(self, box) -> list[int]:
        """Indices of boxes intersecting ``box``; touching boundaries count."""
        hits = set()
        for key in self._keys(box):
            for k in self.buckets.get(key, ()):
                b = self.boxes[k]
                if b[0] <= box[2] and box[0] <= b[2] and b[1] <= box[3] and box[1] <= b[3]:
                    hits.add(k)
        return sorted(hits)


@dataclass(frozen=True)
class BuildingDataset:
    surfaces: tuple[RooftopSurface, ...]
    crs_note: str
    bbox: tuple[float, float, float, float]
    warnings: tuple[str, ...] = ()
    index: GridIndex = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        ids = [s.surface_id for s in self.surfaces]
        if len(set(ids)) != len(ids):
            raise SchemaError("surface_id values must be unique")
        if self.index is None:
            object.__setattr__(self, "index", GridIndex([s.footprint.bounds for s in self.surfaces]))

    @classmethod
    def from_surfaces(cls, surfaces, crs_note="", warnings=()):
        surfaces = tuple(surfaces)
        if surfaces:
            bs = [s.footprint.bounds for s in surfaces]
            bbox = (min(b[0] for b in bs), min(b[1] for b in bs), max(b[2] for b in bs), max(b[3] for b in bs))
        else:
            bbox = (0.0, 0.0, 0.0, 0.0)
        return cls(surfaces, crs_note, bbox, tuple(warnings))

    def __len__(self):
        return len(self.surfaces)


def _require(obj, key, path, kind=None):
    if not isinstance(obj, dict) or key not in obj:
        raise SchemaError(f"missing required field '{path}.{key}'" if path else f"missing required field '{key}'")
    val = obj[key]
    if kind is not None and not isinstance(val, kind):
        raise SchemaError(f"field '{path}.{key}' has wrong type {type(val).__name__}")
    return val


def _parse_ring(raw, path):
    if not isinstance(raw, list):
        raise SchemaError(f"field '{path}' must be a list of [x, y, z]")
    pts = []
    for k, p in enumerate(raw):
        if (not isinstance(p, list) or len(p) != 3
                or not all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in p)):
            raise SchemaError(f"field '{path}[{k}]' must be [x, y, z] numbers")
        pts.append(tuple(float(c) for c in p))
    return pts


def parse_buildings(data: bytes | str, flat_tilt: float = geo.FLAT_TILT_DEG,
                    plane_tolerance: float = geo.PLANE_TOLERANCE_M) -> BuildingDataset:
    """Parse building JSON into rooftop surfaces.

    Surfaces that are non-planar beyond ``plane_tolerance`` or whose projection
    is degenerate are skipped and listed in ``BuildingDataset.warnings``.
    """
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"building file is not UTF-8: {exc}") from None
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None

    crs = _require(doc, "crs", "", str)
    buildings = _require(doc, "buildings", "", list)
    surfaces = []
    warnings = []
    for b, bld in enumerate(buildings):
        bpath = f"buildings[{b}]"
        building_id = str(_require(bld, "building_id", bpath, str))
        raw_addr = _require(bld, "address", bpath, dict)
        parts = [str(_require(raw_addr, f, f"{bpath}.address", (str, int))) for f in ADDRESS_FIELDS]
        address = Address(*parts)
        for r, roof in enumerate(_require(bld, "rooftops", bpath, list)):
            rpath = f"{bpath}.rooftops[{r}]"
            surface_id = str(_require(roof, "surface_id", rpath, str))
            pts = _parse_ring(_require(roof, "ring", rpath, list), f"{rpath}.ring")
            try:
                ring = geo.Polygon3(tuple(pts))
                dev = geo.planarity_deviation(ring)
                if dev > plane_tolerance:
                    raise DegeneratePolygon(f"vertices deviate {dev:.3f} m from best-fit plane")
                surfaces.append(RooftopSurface.from_ring(surface_id, building_id, address, ring, flat_tilt))
            except DegeneratePolygon as exc:
                msg = f"skipped surface {surface_id!r} ({rpath}): {exc}"
                log.warning(msg)
                warnings.append(msg)
    return BuildingDataset.from_surfaces(surfaces, crs, warnings)


def dump_buildings(ds: BuildingDataset) -> bytes:
    """Serialise back to building JSON, grouping surfaces by building_id."""
    order = []
    groups = {}
    for s in ds.surfaces:
        if s.building_id not in groups:
            order.append(s.building_id)
            groups[s.building_id] = {
                "building_id": s.building_id,
                "address": {f: getattr(s.address, f) for f in ADDRESS_FIELDS},
                "rooftops": [],
            }
        groups[s.building_id]["rooftops"].append(
            {"surface_id": s.surface_id, "ring": [list(p) for p in s.ring3d.ring]})
    doc = {"crs": ds.crs_note, "buildings": [groups[b] for b in order]}
    return (json.dumps(doc, indent=1) + "\n").encode("utf-8")


def spatial_query(ds: BuildingDataset, bbox) -> list[RooftopSurface]:
    return [ds.surfaces[k] for k in ds.index.query(tuple(float(v) for v in bbox))]


def flat_share(ds: BuildingDataset) -> float:
    if not ds.surfaces:
        raise EmptyDataset("dataset has no rooftop surfaces")
    return sum(s.is_flat for s in ds.surfaces) / len(ds.surfaces)
