import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pvregistry import buildings as bl
from pvregistry import geometry as geo
from pvregistry import synth
from pvregistry.errors import EmptyDataset, ParseError, SchemaError

from oracles import tilted_rectangle

ADDR = {"street": "Musterweg", "house_number": "1", "postal_code": "46236", "city": "Bottrop"}


def doc(rooftops, address=ADDR, building_id="b1"):
    bld = {"building_id": building_id, "rooftops": rooftops}
    if address is not None:
        bld["address"] = address
    return json.dumps({"crs": "EPSG:25832", "buildings": [bld]})


def square(x0=0.0, y0=0.0, size=10.0, z=8.0):
    return [[x0, y0, z], [x0 + size, y0, z], [x0 + size, y0 + size, z], [x0, y0 + size, z]]


def grid_dataset(n=4, size=10.0, gap=5.0):
    """n x n flat squares; surface (i, j) has lower-left at (i*(size+gap), j*(size+gap))."""
    step = size + gap
    blds = []
    for i in range(n):
        for j in range(n):
            blds.append({"building_id": f"b{i}_{j}",
                         "address": dict(ADDR, house_number=str(i * n + j)),
                         "rooftops": [{"surface_id": f"s{i}_{j}", "ring": square(i * step, j * step, size)}]})
    return bl.parse_buildings(json.dumps({"crs": "local", "buildings": blds}))


class TestParse:
    def test_flat_square(self):
        ds = bl.parse_buildings(doc([{"surface_id": "s1", "ring": square()}]))
        assert len(ds) == 1
        s = ds.surfaces[0]
        assert s.tilt_deg == 0.0
        assert s.azimuth_deg is None and s.is_flat
        assert s.address.street == "Musterweg" and s.address.house_number == "1"
        assert s.footprint_area_m2 == pytest.approx(100.0)

    def test_pitched_rectangle_30(self):
        ring = tilted_rectangle(30.0, 180.0, 6.0, 9.0, origin=(100.0, 200.0, 5.0))
        ds = bl.parse_buildings(doc([{"surface_id": "s1", "ring": [list(p) for p in ring]}]))
        s = ds.surfaces[0]
        assert s.tilt_deg == pytest.approx(30.0, abs=1e-6)
        assert s.azimuth_deg == pytest.approx(180.0, abs=1e-6)
        assert s.footprint_area_m2 == pytest.approx(54.0 * math.cos(math.radians(30)), rel=1e-9)

    def test_missing_address_names_path(self):
        with pytest.raises(SchemaError, match=r"buildings\[0\]\.address"):
            bl.parse_buildings(doc([{"surface_id": "s1", "ring": square()}], address=None))

    def test_missing_address_field(self):
        addr = {k: v for k, v in ADDR.items() if k != "city"}
        with pytest.raises(SchemaError, match=r"buildings\[0\]\.address\.city"):
            bl.parse_buildings(doc([{"surface_id": "s1", "ring": square()}], address=addr))

    def test_bad_vertex(self):
        with pytest.raises(SchemaError, match=r"rooftops\[0\]\.ring\[2\]"):
            bl.parse_buildings(doc([{"surface_id": "s1", "ring": [[0, 0, 0], [1, 0, 0], [1, 1]]}]))

    def test_malformed_json_reports_position(self):
        with pytest.raises(ParseError, match="line 1, column"):
            bl.parse_buildings('{"crs": "x", "buildings": [}')

    def test_duplicate_surface_ids(self):
        rings = [{"surface_id": "s1", "ring": square()}, {"surface_id": "s1", "ring": square(20)}]
        with pytest.raises(SchemaError):
            bl.parse_buildings(doc(rings))

    def test_vertical_and_nonplanar_surfaces_are_skipped(self):
        wall = [[0, 0, 0], [5, 0, 0], [5, 0, 3], [0, 0, 3]]
        warped = [[0, 0, 0], [4, 0, 0], [4, 4, 0.4], [0, 4, 0]]
        ds = bl.parse_buildings(doc([{"surface_id": "wall", "ring": wall},
                                     {"surface_id": "warp", "ring": warped},
                                     {"surface_id": "ok", "ring": square()}]))
        assert [s.surface_id for s in ds.surfaces] == ["ok"]
        assert len(ds.warnings) == 2
        assert "wall" in ds.warnings[0] and "warp" in ds.warnings[1]

    def test_angles_match_geometry_module(self):
        scene = synth.generate(synth.SceneSpec(seed=4, n_buildings=12, render_maps=False))
        ds = bl.parse_buildings(scene.buildings_json)
        for s in ds.surfaces:
            n = geo.newell_normal(s.ring3d)
            assert s.tilt_deg == pytest.approx(geo.tilt_deg(n), abs=1e-9)
            az = geo.azimuth_deg(n)
            assert (s.azimuth_deg is None) == (az is None)
            if az is not None:
                assert s.azimuth_deg == pytest.approx(az, abs=1e-9)

    def test_surfaces_inside_bbox(self):
        ds = grid_dataset(3)
        x0, y0, x1, y1 = ds.bbox
        for s in ds.surfaces:
            b = s.footprint.bounds
            assert x0 <= b[0] and y0 <= b[1] and b[2] <= x1 and b[3] <= y1


def test_round_trip_is_identical():
    scene = synth.generate(synth.SceneSpec(seed=9, n_buildings=20, render_maps=False))
    ds = bl.parse_buildings(scene.buildings_json)
    blob = bl.dump_buildings(ds)
    again = bl.parse_buildings(blob)
    assert again == ds
    assert bl.dump_buildings(again) == blob


class TestSpatialQuery:
    def test_whole_bbox_returns_everything(self):
        ds = grid_dataset()
        assert len(bl.spatial_query(ds, ds.bbox)) == len(ds) == 16

    def test_disjoint(self):
        ds = grid_dataset()
        assert bl.spatial_query(ds, (500, 500, 600, 600)) == []

    def test_corner_graze(self):
        ds = grid_dataset()
        # box touching only the upper-right corner (10, 10) of s0_0; the gap is 5 m
        hits = bl.spatial_query(ds, (10.0, 10.0, 12.0, 12.0))
        assert [s.surface_id for s in hits] == ["s0_0"]

    def test_matches_brute_force(self):
        ds = grid_dataset(6, size=7.0, gap=3.0)
        rng = np.random.default_rng(0)
        for _ in range(200):
            x0, y0 = rng.uniform(-10, 60, 2)
            box = (x0, y0, x0 + rng.uniform(0, 25), y0 + rng.uniform(0, 25))
            expect = {s.surface_id for s in ds.surfaces
                      if s.footprint.bounds[0] <= box[2] and box[0] <= s.footprint.bounds[2]
                      and s.footprint.bounds[1] <= box[3] and box[1] <= s.footprint.bounds[3]}
            assert {s.surface_id for s in bl.spatial_query(ds, box)} == expect

    @given(st.integers(1, 6), st.integers(1, 6))
    def test_tile_partition_covers_all(self, nx, ny):
        ds = grid_dataset(4)
        x0, y0, x1, y1 = ds.bbox
        xs = np.linspace(x0, x1, nx + 1)
        ys = np.linspace(y0, y1, ny + 1)
        seen = set()
        for i in range(nx):
            for j in range(ny):
                seen.update(s.surface_id for s in bl.spatial_query(ds, (xs[i], ys[j], xs[i + 1], ys[j + 1])))
        assert seen == {s.surface_id for s in ds.surfaces}


class TestFlatShare:
    def _mixed(self, n_flat, n_pitched):
        roofs = [{"surface_id": f"f{k}", "ring": square(20 * k, 0)} for k in range(n_flat)]
        roofs += [{"surface_id": f"p{k}",
                   "ring": [list(p) for p in tilted_rectangle(25, 90, 5, 5, origin=(20 * k, 50, 3))]}
                  for k in range(n_pitched)]
        return bl.parse_buildings(doc(roofs))

    def test_all_flat(self):
        assert bl.flat_share(self._mixed(4, 0)) == 1.0

    def test_three_of_ten(self):
        assert bl.flat_share(self._mixed(3, 7)) == pytest.approx(0.3)

    def test_empty(self):
        with pytest.raises(EmptyDataset):
            bl.flat_share(bl.parse_buildings('{"crs": "x", "buildings": []}'))

    def test_synthetic_city(self):
        scene = synth.generate(synth.SceneSpec(seed=1, n_buildings=1000, flat_probability=0.7,
                                               render_maps=False))
        assert bl.flat_share(bl.parse_buildings(scene.buildings_json)) == pytest.approx(0.7, abs=0.05)


@given(st.text(alphabet=" \tAbCäß-.1", max_size=20))
def test_canonicalize_idempotent(text):
    once = bl.canonicalize(text)
    assert bl.canonicalize(once) == once
    assert once == once.strip() and "  " not in once


def test_canonical_key_ignores_case_and_spacing():
    a = bl.Address("Muster  Weg", "1a", "46236", "Bottrop")
    b = bl.Address(" muster weg ", "1A", "46236", "BOTTROP")
    assert a.canonical_key == b.canonical_key == "muster weg|1a|46236|bottrop"
