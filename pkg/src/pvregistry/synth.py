"""Synthetic cities with exact ground truth for end-to-end checks.

Buildings are axis-aligned rectangles packed into shelves. Pitched roofs slope
along one axis, so a panel drawn as a rectangle in the roof plane projects to
an axis-aligned rectangle and its true area is known exactly.
"""
from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import geometry as geo
from .buildings import Address, BuildingDataset, parse_buildings
from .errors import SpecError
from .raster import BinaryMask, GridHeader, ProbabilityMap, PvPolygon, write_grid
from .reconcile import OfficialEntry, write_official
from .registry import DEFAULT_CONSTANTS, PvInstance, aggregate, write_instances, write_registry

STREETS = ("Musterweg", "Lindenstraße", "Am Hang", "Birkenallee", "Gartenstraße",
           "Kirchplatz", "Mühlenweg", "Schulstraße", "Waldring", "Zechenstraße")
POSTAL_CODE = "45000"
CITY = "Synthstadt"
OWNER_STREET = "Verwaltungsallee"
EAVE_HEIGHT = 6.0
GAP = 4.0


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    n_buildings: int = 16
    n_large: int = 0
    # expected share of flat rooftop surfaces among ordinary buildings
    flat_probability: float = 0.3
    gable_share: float = 0.5
    # (min, max, mode) of a PERT (scaled beta) law; concentration 4 is classic PERT
    tilt_distribution: tuple[float, float, float] = (5.0, 45.0, 12.5)
    tilt_concentration: float = 12.0
    panel_probability: float = 1.0
    panel_area_range: tuple[float, float] = (8.0, 30.0)
    building_size_range: tuple[float, float] = (10.0, 16.0)
    large_panel_area_range: tuple[float, float] = (210.0, 800.0)
    large_size_range: tuple[float, float] = (32.0, 45.0)
    # fraction of ordinary systems registered as two separate commissionings
    multi_entry_share: float = 0.0
    cellsize: float = 0.05
    noise_sigma: float = 0.0
    tile_size: int = 400
    render_maps: bool = True

    def __post_init__(self):
        for name in ("tilt_distribution", "panel_area_range", "building_size_range",
                     "large_panel_area_range", "large_size_range"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        self.validate()

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise SpecError(f"unknown scene keys: {', '.join(sorted(unknown))}")
        try:
            return cls(**d)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, SpecError):
                raise
            raise SpecError(str(exc)) from None

    @property
    def margin(self) -> float:
        return max(0.5, 2 * self.cellsize)

    def validate(self):
        def check(cond, msg):
            if not cond:
                raise SpecError(msg)

        check(self.n_buildings >= 0 and 0 <= self.n_large <= self.n_buildings,
              "need 0 <= n_large <= n_buildings")
        for name in ("flat_probability", "gable_share", "panel_probability", "multi_entry_share"):
            v = getattr(self, name)
            check(0.0 <= v <= 1.0, f"{name} must be in [0, 1], got {v}")
        lo, hi, mode = self.tilt_distribution
        check(0.0 <= lo <= mode <= hi <= 85.0 and lo < hi, "tilt_distribution must satisfy 0 <= min <= mode <= max <= 85")
        check(lo >= geo.FLAT_TILT_DEG, f"pitched tilts must be at least {geo.FLAT_TILT_DEG} degrees")
        check(self.tilt_concentration > 0, "tilt_concentration must be positive")
        for name in ("panel_area_range", "building_size_range", "large_panel_area_range", "large_size_range"):
            a, b = getattr(self, name)
            check(0 < a <= b, f"{name} must be a positive (min, max) pair")
        check(self.cellsize > 0 and self.tile_size > 0, "cellsize and tile_size must be positive")
        check(0.0 <= self.noise_sigma <= 1.0, "noise_sigma must be in [0, 1]")
        # smallest surface: half of the smallest gable footprint, at zero tilt
        m = self.margin
        s = self.building_size_range[0]
        fit = (s - 2 * m) * (s / 2 - 2 * m) if self.gable_share > 0 else (s - 2 * m) ** 2
        check(s / 2 > 2 * m and self.panel_area_range[1] <= fit,
              f"infeasible density: panels up to {self.panel_area_range[1]} m2 do not fit on "
              f"{s} m buildings (max {max(fit, 0):.1f} m2)")
        if self.n_large:
            s = self.large_size_range[0]
            check(self.large_panel_area_range[1] <= (s - 2 * m) ** 2,
                  f"infeasible density: large panels do not fit on {s} m buildings")


@dataclass(frozen=True)
class Panel:
    surface_id: str
    building_id: str
    address: Address
    ring: geo.Polygon2
    tilt_deg: float
    area_3d_m2: float
    perimeter_m: float


@dataclass
class GroundTruth:
    buildings: BuildingDataset
    panels: list[Panel]
    instances: list[PvInstance]
    registry: list
    official: list[OfficialEntry]


@dataclass
class Scene:
    spec: SceneSpec
    buildings_json: bytes
    maps: dict[str, ProbabilityMap]
    truth_masks: dict[str, BinaryMask]
    truth: GroundTruth

    def exact_pv_polygons(self) -> list[PvPolygon]:
        """Ground-truth panel outlines as pipeline input (no rasterisation)."""
        return [PvPolygon(f"panel#{k}", p.ring, "exact", geo.area_2d(p.ring))
                for k, p in enumerate(self.truth.panels)]


def _surface(x0, y0, x1, y1, tilt, azimuth):
    """Planar ring over a horizontal rectangle, sloping down toward ``azimuth``."""
    t = math.tan(math.radians(tilt))
    def z(x, y):
        if azimuth is None:
            return EAVE_HEIGHT
        # height grows with distance from the low (downslope) edge
        d = {0.0: y1 - y, 90.0: x1 - x, 180.0: y - y0, 270.0: x - x0}[azimuth]
        return EAVE_HEIGHT + d * t
    return [[x, y, z(x, y)] for x, y in ((x0, y0), (x1, y0), (x1, y1), (x0, y1))]


def _place_panel(rng, rect, tilt, azimuth, area_3d, margin):
    """Axis-aligned panel footprint with roof-plane area ``area_3d`` inside ``rect``."""
    x0, y0, x1, y1 = rect
    ax, ay = x1 - x0 - 2 * margin, y1 - y0 - 2 * margin
    c = math.cos(math.radians(tilt))
    avail = ax * ay / c
    if area_3d > avail:
        raise SpecError(f"panel of {area_3d:.1f} m2 does not fit a {avail:.1f} m2 surface")
    s = math.sqrt(area_3d / avail)
    w, h = ax * s, ay * s
    px = x0 + margin + rng.uniform(0, ax - w)
    py = y0 + margin + rng.uniform(0, ay - h)
    # roof-plane area: the horizontal extent along the slope stretches by 1/cos(tilt)
    if azimuth in (0.0, 180.0):
        true_area = w * (h / c)
    elif azimuth in (90.0, 270.0):
        true_area = (w / c) * h
    else:
        true_area = w * h
    ring = geo.Polygon2(((px, py), (px + w, py), (px + w, py + h), (px, py + h)))
    return ring, true_area, 2 * (w + h)


def _split_capacity(rng, cap):
    a = round(cap * rng.uniform(0.3, 0.7), 3)
    b = round(cap - a, 3)
    return a, b


def generate(spec: SceneSpec) -> Scene:
    rng = np.random.default_rng(spec.seed)
    lo, hi, mode = spec.tilt_distribution
    lam = spec.tilt_concentration
    tilt_a = 1 + lam * (mode - lo) / (hi - lo)
    tilt_b = 1 + lam * (hi - mode) / (hi - lo)
    g = spec.gable_share
    f = spec.flat_probability
    # building-level flat probability giving a surface-level flat share of f
    q_flat = f * (1 + g) / (1 + f * g)
    large_ids = set(rng.choice(spec.n_buildings, size=spec.n_large, replace=False).tolist()) if spec.n_large else set()

    row_width = math.ceil(math.sqrt(max(spec.n_buildings, 1))) * (spec.building_size_range[1] + GAP)
    cx, cy, row_h = 0.0, 0.0, 0.0
    doc = {"crs": "synthetic local metric grid (EPSG:25832-like)", "buildings": []}
    panels = []
    for b in range(spec.n_buildings):
        large = b in large_ids
        size_lo, size_hi = spec.large_size_range if large else spec.building_size_range
        wx, wy = (float(v) for v in rng.uniform(size_lo, size_hi, 2))
        if cx > 0 and cx + wx > row_width:
            cx, cy, row_h = 0.0, cy + row_h + GAP, 0.0
        x0, y0, x1, y1 = cx, cy, cx + wx, cy + wy
        cx += wx + GAP
        row_h = max(row_h, wy)

        building_id = f"B{b:05d}"
        address = Address(STREETS[b % len(STREETS)], str(b // len(STREETS) + 1), POSTAL_CODE, CITY)
        if large or rng.random() < q_flat:
            surfaces = [((x0, y0, x1, y1), 0.0, None)]
        else:
            tilt = lo + (hi - lo) * float(rng.beta(tilt_a, tilt_b))
            if rng.random() < g:
                if rng.random() < 0.5:
                    ym = 0.5 * (y0 + y1)
                    surfaces = [((x0, y0, x1, ym), tilt, 180.0), ((x0, ym, x1, y1), tilt, 0.0)]
                else:
                    xm = 0.5 * (x0 + x1)
                    surfaces = [((x0, y0, xm, y1), tilt, 270.0), ((xm, y0, x1, y1), tilt, 90.0)]
            else:
                surfaces = [((x0, y0, x1, y1), tilt, float(rng.choice([0.0, 90.0, 180.0, 270.0])))]
        rooftops = []
        for k, (rect, tilt, az) in enumerate(surfaces):
            rooftops.append({"surface_id": f"{building_id}-R{k}", "ring": _surface(*rect, tilt, az)})
        doc["buildings"].append({
            "building_id": building_id,
            "address": {"street": address.street, "house_number": address.house_number,
                        "postal_code": address.postal_code, "city": address.city},
            "rooftops": rooftops,
        })
        if rng.random() < spec.panel_probability:
            k = int(rng.integers(len(surfaces)))
            rect, tilt, az = surfaces[k]
            a_lo, a_hi = spec.large_panel_area_range if large else spec.panel_area_range
            area = float(rng.uniform(a_lo, a_hi))
            ring, true_area, perim = _place_panel(rng, rect, tilt, az, area, spec.margin)
            panels.append(Panel(f"{building_id}-R{k}", building_id, address, ring, tilt, true_area, perim))

    buildings_json = (json.dumps(doc, indent=1) + "\n").encode("utf-8")
    ds = parse_buildings(buildings_json)

    instances = []
    for k, p in enumerate(panels):
        instances.append(PvInstance(
            pv_ref=f"panel#{k}", surface_id=p.surface_id, address=p.address, clipped_ring=p.ring,
            area_2d_m2=geo.area_2d(p.ring), tilt_deg=p.tilt_deg, area_tilt_m2=p.area_3d_m2,
            capacity_kwp=p.area_3d_m2 / DEFAULT_CONSTANTS.m2_per_kwp,
        ))
    registry = aggregate(instances)
    official = _official_from_registry(rng, registry, spec.multi_entry_share)
    maps, masks = _render(rng, spec, ds, panels) if spec.render_maps else ({}, {})
    truth = GroundTruth(ds, panels, instances, registry, official)
    return Scene(spec, buildings_json, maps, masks, truth)


def _random_date(rng):
    return dt.date(2005, 1, 1) + dt.timedelta(days=int(rng.integers(0, 365 * 18)))


def _official_from_registry(rng, registry, multi_share):
    """One official entry per system; ``round(multi_share * n_ordinary)`` systems are split in two.

    Only ordinary systems (at most the audit threshold, at least 2 kWp) are
    split, so every part stays below the threshold.
    """
    threshold = DEFAULT_CONSTANTS.public_capacity_threshold_kwp
    caps = [round(e.total_capacity_kwp, 3) for e in registry]
    ordinary = [k for k, c in enumerate(caps) if c <= threshold]
    eligible = [k for k in ordinary if caps[k] >= 2.0]
    n_split = round(multi_share * len(ordinary))
    if n_split > len(eligible):
        raise SpecError(f"multi_entry_share needs {n_split} splittable systems, scene has {len(eligible)}")
    split = set(rng.permutation(eligible)[:n_split].tolist()) if n_split else set()
    entries = []
    for k, e in enumerate(registry):
        if k in split:
            d1 = _random_date(rng)
            d2 = d1 + dt.timedelta(days=int(rng.integers(30, 2000)))
            for part, d in zip(_split_capacity(rng, caps[k]), (d1, d2)):
                entries.append((e.address, part, d))
        else:
            entries.append((e.address, caps[k], _random_date(rng)))
    return [OfficialEntry(f"E{k:05d}", a, c, d) for k, (a, c, d) in enumerate(entries)]


def _render(rng, spec, ds, panels):
    cs = spec.cellsize
    T = spec.tile_size
    x0, y0, x1, y1 = ds.bbox if len(ds) else (0.0, 0.0, cs, cs)
    ox = math.floor((x0 - 1.0) / cs) * cs
    oy = math.floor((y0 - 1.0) / cs) * cs
    ntc = max(1, math.ceil((x1 + 1.0 - ox) / cs / T))
    ntr = max(1, math.ceil((y1 + 1.0 - oy) / cs / T))
    ncols, nrows = ntc * T, ntr * T
    grid = np.zeros((nrows, ncols), dtype=bool)
    for p in panels:
        px0, py0, px1, py1 = p.ring.bounds
        # cells whose centre lies inside the panel
        c_lo = math.ceil((px0 - ox) / cs - 0.5)
        c_hi = math.ceil((px1 - ox) / cs - 0.5)
        j_lo = math.ceil((py0 - oy) / cs - 0.5)
        j_hi = math.ceil((py1 - oy) / cs - 0.5)
        grid[nrows - j_hi:nrows - j_lo, c_lo:c_hi] = True
    maps, masks = {}, {}
    for tr in range(ntr):
        for tc in range(ntc):
            name = f"tile_r{tr:03d}_c{tc:03d}"
            sub = grid[tr * T:(tr + 1) * T, tc * T:(tc + 1) * T]
            hdr = GridHeader(T, T, ox + tc * T * cs, oy + (ntr - 1 - tr) * T * cs, cs)
            vals = sub.astype(float)
            if spec.noise_sigma > 0:
                vals = np.clip(vals + rng.uniform(-spec.noise_sigma, spec.noise_sigma, vals.shape), 0.0, 1.0)
                # quantise to the 6-decimal file precision so maps round-trip exactly
                vals = np.rint(vals * 1e6) / 1e6
            maps[name] = ProbabilityMap(hdr, vals)
            masks[name] = BinaryMask(hdr, sub)
    return maps, masks


@dataclass(frozen=True)
class PerturbSpec:
    duplicate_rate: float = 0.0
    n_inflated: int = 0
    inflation_factor: float = 10.0
    n_false_address: int = 0
    n_deleted: int = 0
    seed: int = 0
    threshold_kwp: float = DEFAULT_CONSTANTS.public_capacity_threshold_kwp

    @classmethod
    def from_dict(cls, d: dict) -> "PerturbSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise SpecError(f"unknown perturbation keys: {', '.join(sorted(unknown))}")
        return cls(**d)


def perturb_official(truth: list[OfficialEntry], spec: PerturbSpec = PerturbSpec()):
    """Inject the registry defect classes into a clean official registry.

    Returns ``(entries, manifest)``; the manifest lists every injected defect.
    """
    if not (0.0 <= spec.duplicate_rate <= 1.0) or spec.inflation_factor <= 1.0:
        raise SpecError("duplicate_rate must be in [0, 1] and inflation_factor > 1")
    rng = np.random.default_rng(spec.seed)
    per_key = {}
    for e in truth:
        per_key.setdefault(e.canonical_key, []).append(e)
    single = [e for e in truth if len(per_key[e.canonical_key]) == 1]
    large = [e for e in single if e.capacity_kwp > spec.threshold_kwp]
    small = [e for e in single if e.capacity_kwp <= spec.threshold_kwp]
    n_big = spec.n_false_address + spec.n_deleted
    if n_big > len(large):
        raise SpecError(f"need {n_big} large single-entry systems, registry has {len(large)}")
    if spec.n_inflated > len(small):
        raise SpecError(f"need {spec.n_inflated} small systems to inflate, registry has {len(small)}")

    pick = rng.permutation(len(large))[:n_big]
    false_addr = sorted((large[i] for i in pick[:spec.n_false_address]), key=lambda e: e.entry_id)
    deleted = sorted((large[i] for i in pick[spec.n_false_address:]), key=lambda e: e.entry_id)
    inflated = sorted((small[i] for i in rng.permutation(len(small))[:spec.n_inflated]),
                      key=lambda e: e.entry_id)

    false_ids = {e.entry_id: k for k, e in enumerate(false_addr)}
    infl_ids = {e.entry_id for e in inflated}
    dele_ids = {e.entry_id for e in deleted}
    out = []
    for e in truth:
        if e.entry_id in dele_ids:
            continue
        if e.entry_id in false_ids:
            owner = Address(OWNER_STREET, str(false_ids[e.entry_id] + 1), e.address.postal_code, e.address.city)
            e = OfficialEntry(e.entry_id, owner, e.capacity_kwp, e.commissioning_date)
        elif e.entry_id in infl_ids:
            e = OfficialEntry(e.entry_id, e.address, round(e.capacity_kwp * spec.inflation_factor, 3),
                              e.commissioning_date)
        out.append(e)

    n_dup = math.floor(spec.duplicate_rate * len(truth))
    if n_dup > len(out):
        raise SpecError("more duplicates requested than entries available")
    width = len(truth[0].entry_id) - 1 if truth else 5
    next_id = len(truth)
    if next_id + n_dup >= 10 ** width:
        raise SpecError("entry id space exhausted")
    dups = []
    for i in sorted(rng.permutation(len(out))[:n_dup].tolist()):
        src = out[i]
        dups.append(OfficialEntry(f"E{next_id:0{width}d}", src.address, src.capacity_kwp, src.commissioning_date))
        next_id += 1
    out = sorted(out + dups, key=lambda e: e.entry_id)

    multi = sorted(k for k, v in per_key.items() if len(v) > 1)
    manifest = {
        "duplicates": [d.entry_id for d in dups],
        "inflated": [e.entry_id for e in inflated],
        "false_address": [e.entry_id for e in false_addr],
        "false_address_true_keys": [e.canonical_key for e in false_addr],
        "deleted": [e.entry_id for e in deleted],
        "deleted_keys": sorted(e.canonical_key for e in deleted),
        "multi_entry_keys": multi,
        "spec": asdict(spec),
    }
    return out, manifest


def write_scene(scene: Scene, out_dir, perturbation: PerturbSpec | None = None) -> dict:
    """Write every scene artefact under ``out_dir``; returns the manifest."""
    out = Path(out_dir)
    (out / "grids").mkdir(parents=True, exist_ok=True)
    (out / "truth_grids").mkdir(parents=True, exist_ok=True)
    (out / "buildings.json").write_bytes(scene.buildings_json)
    for name, m in scene.maps.items():
        (out / "grids" / f"{name}.asc").write_bytes(write_grid(m))
    for name, m in scene.truth_masks.items():
        (out / "truth_grids" / f"{name}.asc").write_bytes(write_grid(m))
    t = scene.truth
    (out / "truth_instances.csv").write_bytes(write_instances(t.instances))
    (out / "truth_registry.csv").write_bytes(write_registry(t.registry))
    (out / "official_truth.csv").write_bytes(write_official(t.official))
    official, manifest = perturb_official(t.official, perturbation or PerturbSpec())
    (out / "official.csv").write_bytes(write_official(official))
    manifest = {
        "scene": asdict(scene.spec),
        "n_panels": len(t.panels),
        "panel_area_3d_m2": math.fsum(p.area_3d_m2 for p in t.panels),
        "panel_area_2d_m2": math.fsum(i.area_2d_m2 for i in t.instances),
        "truth_capacity_kwp": math.fsum(e.total_capacity_kwp for e in t.registry),
        **manifest,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest
