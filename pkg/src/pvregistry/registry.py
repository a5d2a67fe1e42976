"""Rooftop assignment, tilt correction, capacity and the address-level registry."""
from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from dataclasses import dataclass, field, fields, replace
from typing import Iterable, Sequence

from . import geometry as geo
from .buildings import Address, BuildingDataset, spatial_query
from .errors import ParseError, TiltOutOfRange
from .raster import PvPolygon


@dataclass(frozen=True)
class Constants:
    m2_per_kwp: float = 6.5
    min_entry_area_m2: float = 6.0
    public_capacity_threshold_kwp: float = 30.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (isinstance(v, (int, float)) and v > 0):
                raise ValueError(f"{f.name} must be positive, got {v!r}")

    def with_overrides(self, **kw) -> "Constants":
        return replace(self, **{k: float(v) for k, v in kw.items() if v is not None})


DEFAULT_CONSTANTS = Constants()


def tilt_adjusted_area(area_2d: float, tilt: float) -> float:
    """Roof-plane area from planimetric area; flat roofs are the identity."""
    if not 0.0 <= tilt < 90.0:
        raise TiltOutOfRange(f"tilt must be in [0, 90), got {tilt}")
    return area_2d / math.cos(math.radians(tilt))


def capacity_kwp(area_tilt: float, m2_per_kwp: float = DEFAULT_CONSTANTS.m2_per_kwp) -> float:
    return area_tilt / m2_per_kwp


@dataclass(frozen=True)
class PvInstance:
    pv_ref: str
    surface_id: str
    address: Address
    clipped_ring: geo.Polygon2
    area_2d_m2: float
    tilt_deg: float
    area_tilt_m2: float
    capacity_kwp: float

    @property
    def canonical_key(self) -> str:
        return self.address.canonical_key

    @classmethod
    def build(cls, pv_ref, surface, ring, constants=DEFAULT_CONSTANTS, area_2d=None):
        a2 = geo.area_2d(ring) if area_2d is None else area_2d
        at = tilt_adjusted_area(a2, surface.tilt_deg)
        return cls(pv_ref, surface.surface_id, surface.address, ring, a2,
                   surface.tilt_deg, at, capacity_kwp(at, constants.m2_per_kwp))


@dataclass(frozen=True)
class Assignment:
    instances: tuple[PvInstance, ...]
    unassigned_area_m2: float


def assign(pvs: Iterable[PvPolygon], ds: BuildingDataset,
           constants: Constants = DEFAULT_CONSTANTS,
           min_piece_area: float = geo.SLIVER_AREA_M2) -> Assignment:
    """Clip every PV polygon against candidate rooftop footprints.

    Area of a PV polygon that lands on no rooftop (including discarded
    slivers) accumulates in ``unassigned_area_m2``.
    """
    instances = []
    unassigned = []
    for pv in pvs:
        placed = []
        for surface in spatial_query(ds, pv.ring.bounds):
            for piece in geo.intersect(pv.ring, surface.footprint, min_piece_area):
                inst = PvInstance.build(pv.pv_id, surface, piece, constants)
                placed.append(inst.area_2d_m2)
                instances.append(inst)
        unassigned.append(pv.area_m2 - math.fsum(placed))
    return Assignment(tuple(instances), math.fsum(unassigned))


@dataclass(frozen=True)
class RegistryEntry:
    address: Address
    instance_count: int
    total_area_2d_m2: float
    total_area_tilt_m2: float
    total_capacity_kwp: float
    surface_ids: tuple[str, ...] = field(default=())

    @property
    def canonical_key(self) -> str:
        return self.address.canonical_key


def aggregate(instances: Iterable[PvInstance],
              constants: Constants = DEFAULT_CONSTANTS) -> list[RegistryEntry]:
    """Group instances per canonical address and drop entries below the minimum area.

    The exclusion compares the summed tilt-adjusted area of the whole address.
    """
    groups = defaultdict(list)
    for inst in instances:
        groups[inst.canonical_key].append(inst)
    entries = []
    for key in sorted(groups):
        members = sorted(groups[key], key=lambda i: (i.surface_id, i.pv_ref, i.area_2d_m2))
        area_tilt = math.fsum(i.area_tilt_m2 for i in members)
        if area_tilt < constants.min_entry_area_m2:
            continue
        entries.append(RegistryEntry(
            address=members[0].address,
            instance_count=len(members),
            total_area_2d_m2=math.fsum(i.area_2d_m2 for i in members),
            total_area_tilt_m2=area_tilt,
            total_capacity_kwp=math.fsum(i.capacity_kwp for i in members),
            surface_ids=tuple(sorted({i.surface_id for i in members})),
        ))
    return entries


@dataclass(frozen=True)
class TiltHistogram:
    bin_edges: tuple[float, ...]
    counts: tuple[int, ...]
    flat_share: float
    n_instances: int

    @property
    def modal_bin(self) -> tuple[float, float] | None:
        if not any(self.counts):
            return None
        k = max(range(len(self.counts)), key=lambda i: (self.counts[i], -i))
        return self.bin_edges[k], self.bin_edges[k + 1]


def tilt_histogram(instances: Sequence[PvInstance], flat_tilt: float = geo.FLAT_TILT_DEG,
                   bin_width: float = 5.0) -> TiltHistogram:
    """Counts of non-flat instances per tilt bin, plus the share on flat roofs."""
    nbins = int(round(90.0 / bin_width))
    edges = tuple(k * bin_width for k in range(nbins + 1))
    counts = [0] * nbins
    n_flat = 0
    for inst in instances:
        if inst.tilt_deg < flat_tilt:
            n_flat += 1
            continue
        counts[min(int(inst.tilt_deg // bin_width), nbins - 1)] += 1
    n = len(instances)
    return TiltHistogram(edges, tuple(counts), n_flat / n if n else 0.0, n)


REGISTRY_COLUMNS = ("canonical_key", "street", "house_number", "postal_code", "city",
                    "instance_count", "area_2d_m2", "area_tilt_m2", "capacity_kwp", "surface_ids")

INSTANCE_COLUMNS = ("pv_ref", "surface_id", "street", "house_number", "postal_code", "city",
                    "tilt_deg", "area_2d_m2", "area_tilt_m2", "capacity_kwp", "ring")


def _writer(buf):
    return csv.writer(buf, lineterminator="\n")


def write_registry(entries: Iterable[RegistryEntry]) -> bytes:
    buf = io.StringIO()
    w = _writer(buf)
    w.writerow(REGISTRY_COLUMNS)
    for e in sorted(entries, key=lambda e: e.canonical_key):
        a = e.address
        w.writerow([e.canonical_key, a.street, a.house_number, a.postal_code, a.city,
                    e.instance_count, f"{e.total_area_2d_m2:.3f}", f"{e.total_area_tilt_m2:.3f}",
                    f"{e.total_capacity_kwp:.3f}", ";".join(e.surface_ids)])
    return buf.getvalue().encode("utf-8")


def _rows(data, columns, what):
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    reader = csv.DictReader(io.StringIO(data))
    if reader.fieldnames is None or tuple(reader.fieldnames) != columns:
        raise ParseError(f"{what}: expected header {','.join(columns)}, got {reader.fieldnames}")
    for lineno, row in enumerate(reader, 2):
        if None in row or any(v is None for v in row.values()):
            raise ParseError(f"{what} line {lineno}: wrong number of fields")
        yield lineno, row


def _num(row, key, lineno, what, kind=float):
    try:
        return kind(row[key])
    except ValueError:
        raise ParseError(f"{what} line {lineno}: bad {key} value {row[key]!r}") from None


def read_registry(data: bytes | str) -> list[RegistryEntry]:
    entries = []
    for lineno, row in _rows(data, REGISTRY_COLUMNS, "registry"):
        addr = Address(row["street"], row["house_number"], row["postal_code"], row["city"])
        if addr.canonical_key != row["canonical_key"]:
            raise ParseError(f"registry line {lineno}: canonical_key does not match address fields")
        entries.append(RegistryEntry(
            address=addr,
            instance_count=_num(row, "instance_count", lineno, "registry", int),
            total_area_2d_m2=_num(row, "area_2d_m2", lineno, "registry"),
            total_area_tilt_m2=_num(row, "area_tilt_m2", lineno, "registry"),
            total_capacity_kwp=_num(row, "capacity_kwp", lineno, "registry"),
            surface_ids=tuple(s for s in row["surface_ids"].split(";") if s),
        ))
    return entries


def _ring_text(p: geo.Polygon2) -> str:
    return ";".join(f"{x!r} {y!r}" for x, y in p.exterior)


def _parse_ring(text, lineno):
    try:
        pts = [tuple(float(c) for c in pair.split()) for pair in text.split(";")]
        return geo.Polygon2(tuple(pts))
    except ValueError as exc:
        raise ParseError(f"instances line {lineno}: bad ring: {exc}") from None


def write_instances(instances: Iterable[PvInstance]) -> bytes:
    """Lossless instance dump (full float precision)."""
    buf = io.StringIO()
    w = _writer(buf)
    w.writerow(INSTANCE_COLUMNS)
    for i in instances:
        a = i.address
        w.writerow([i.pv_ref, i.surface_id, a.street, a.house_number, a.postal_code, a.city,
                    repr(i.tilt_deg), repr(i.area_2d_m2), repr(i.area_tilt_m2), repr(i.capacity_kwp),
                    _ring_text(i.clipped_ring)])
    return buf.getvalue().encode("utf-8")


def read_instances(data: bytes | str) -> list[PvInstance]:
    out = []
    for lineno, row in _rows(data, INSTANCE_COLUMNS, "instances"):
        out.append(PvInstance(
            pv_ref=row["pv_ref"],
            surface_id=row["surface_id"],
            address=Address(row["street"], row["house_number"], row["postal_code"], row["city"]),
            clipped_ring=_parse_ring(row["ring"], lineno),
            area_2d_m2=_num(row, "area_2d_m2", lineno, "instances"),
            tilt_deg=_num(row, "tilt_deg", lineno, "instances"),
            area_tilt_m2=_num(row, "area_tilt_m2", lineno, "instances"),
            capacity_kwp=_num(row, "capacity_kwp", lineno, "instances"),
        ))
    return out


def write_histogram(hist: TiltHistogram) -> bytes:
    buf = io.StringIO()
    w = _writer(buf)
    w.writerow(("bin_start_deg", "bin_end_deg", "count"))
    for lo, hi, c in zip(hist.bin_edges, hist.bin_edges[1:], hist.counts):
        w.writerow((f"{lo:g}", f"{hi:g}", c))
    w.writerow(("flat_share", "", f"{hist.flat_share:.6f}"))
    w.writerow(("n_instances", "", hist.n_instances))
    return buf.getvalue().encode("utf-8")
