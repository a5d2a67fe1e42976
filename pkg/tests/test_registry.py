import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pvregistry import buildings as bl
from pvregistry import geometry as geo
from pvregistry import registry as reg
from pvregistry import synth
from pvregistry.errors import ParseError, TiltOutOfRange
from pvregistry.raster import PvPolygon

from oracles import monte_carlo_intersection_area

ADDR = bl.Address("Musterweg", "1", "46236", "Bottrop")


def rect2(x0, y0, x1, y1):
    return geo.Polygon2(((x0, y0), (x1, y0), (x1, y1), (x0, y1)))


def flat_surface(sid, x0, y0, x1, y1, address=ADDR):
    ring = geo.Polygon3(tuple((x, y, 5.0) for x, y in rect2(x0, y0, x1, y1).exterior))
    return bl.RooftopSurface.from_ring(sid, sid, address, ring)


def pitched_surface(sid, x0, y0, x1, y1, tilt, address=ADDR):
    # slopes down toward the south (z grows with y)
    t = math.tan(math.radians(tilt))
    ring = geo.Polygon3(tuple((x, y, 5.0 + (y - y0) * t) for x, y in rect2(x0, y0, x1, y1).exterior))
    return bl.RooftopSurface.from_ring(sid, sid, address, ring)


def pv(pid, poly):
    return PvPolygon(pid, poly, "t", geo.area_2d(poly))


def instance(area_tilt, key="a", tilt=0.0, sid="s"):
    addr = bl.Address("Weg", key, "1", "X")
    a2 = area_tilt * math.cos(math.radians(tilt))
    return reg.PvInstance(f"pv-{key}-{sid}", sid, addr, rect2(0, 0, 1, 1), a2, tilt, area_tilt,
                          reg.capacity_kwp(area_tilt))


class TestAssign:
    def test_inside_flat_roof(self):
        ds = bl.BuildingDataset.from_surfaces([flat_surface("r1", 0, 0, 10, 10)])
        out = reg.assign([pv("p", rect2(2, 2, 5, 4))], ds)
        assert len(out.instances) == 1
        inst = out.instances[0]
        assert inst.area_2d_m2 == pytest.approx(6.0)
        assert inst.area_tilt_m2 == inst.area_2d_m2
        assert inst.capacity_kwp == pytest.approx(6.0 / 6.5)
        assert out.unassigned_area_m2 == pytest.approx(0.0, abs=1e-12)

    def test_straddle_60_40(self):
        ds = bl.BuildingDataset.from_surfaces([flat_surface("left", 0, 0, 10, 10),
                                               flat_surface("right", 10, 0, 20, 10)])
        panel = rect2(4, 2, 14, 6)  # 6 m of width on the left roof, 4 m on the right
        out = reg.assign([pv("p", panel)], ds)
        by_roof = {i.surface_id: i.area_2d_m2 for i in out.instances}
        total = sum(by_roof.values())
        assert by_roof["left"] / total == pytest.approx(0.6, abs=1e-9)
        assert by_roof["right"] / total == pytest.approx(0.4, abs=1e-9)
        for s in ds.surfaces:
            est, sigma = monte_carlo_intersection_area(panel.exterior, s.footprint.exterior, n=200_000, seed=1)
            assert by_roof[s.surface_id] == pytest.approx(est, abs=max(3 * sigma, 1e-9))

    def test_empty_ground(self):
        ds = bl.BuildingDataset.from_surfaces([flat_surface("r1", 0, 0, 10, 10)])
        out = reg.assign([pv("p", rect2(50, 50, 53, 52))], ds)
        assert out.instances == ()
        assert out.unassigned_area_m2 == pytest.approx(6.0)

    def test_pitched_roof_carries_tilt(self):
        ds = bl.BuildingDataset.from_surfaces([pitched_surface("r1", 0, 0, 10, 10, 60.0)])
        out = reg.assign([pv("p", rect2(1, 1, 6, 3))], ds)
        inst = out.instances[0]
        assert inst.tilt_deg == pytest.approx(60.0)
        assert inst.area_tilt_m2 == pytest.approx(20.0, rel=1e-9)

    def test_sliver_goes_to_unassigned(self):
        ds = bl.BuildingDataset.from_surfaces([flat_surface("a", 0, 0, 10, 10)])
        # only 0.01 x 2 = 0.02 m2 overlaps the roof, below the sliver threshold
        out = reg.assign([pv("p", rect2(9.99, 2, 14, 4))], ds)
        assert out.instances == ()
        assert out.unassigned_area_m2 == pytest.approx(4.01 * 2)

    def test_conservation_on_synthetic_raster(self):
        scene = synth.generate(synth.SceneSpec(seed=3, n_buildings=9))
        from pvregistry import raster as rs
        pvs = []
        for tile, m in sorted(scene.maps.items()):
            pvs.extend(rs.vectorize(rs.threshold(m, 0.5), tile))
        out = reg.assign(pvs, scene.truth.buildings)
        total_in = math.fsum(p.area_m2 for p in pvs)
        total_out = math.fsum(i.area_2d_m2 for i in out.instances) + out.unassigned_area_m2
        assert total_out == pytest.approx(total_in, rel=1e-6)


class TestTiltAdjust:
    def test_examples(self):
        assert reg.tilt_adjusted_area(10.0, 0.0) == 10.0
        assert reg.tilt_adjusted_area(10.0, 60.0) == pytest.approx(20.0, rel=1e-12)
        # 7 / (sqrt(3)/2) = 14 / sqrt(3)
        assert reg.tilt_adjusted_area(7.0, 30.0) == pytest.approx(14 / math.sqrt(3), rel=1e-12)
        assert reg.tilt_adjusted_area(7.0, 30.0) == pytest.approx(8.0829, abs=1e-4)

    @pytest.mark.parametrize("tilt", [90.0, 95.0, -1.0])
    def test_out_of_range(self, tilt):
        with pytest.raises(TiltOutOfRange):
            reg.tilt_adjusted_area(1.0, tilt)

    @given(st.floats(0.01, 1e4), st.floats(0, 89))
    def test_monotone(self, a, t):
        at = reg.tilt_adjusted_area(a, t)
        assert at >= a
        if t == 0.0:
            assert at == a
        elif t > 1e-3:
            assert at > a


class TestCapacity:
    def test_examples(self):
        assert reg.capacity_kwp(6.5) == 1.0
        assert reg.capacity_kwp(0.0) == 0.0
        assert reg.capacity_kwp(13.0) == 2.0

    @given(st.floats(0, 1e5), st.floats(0, 1e5))
    def test_linear(self, a, b):
        assert reg.capacity_kwp(a + b) == pytest.approx(reg.capacity_kwp(a) + reg.capacity_kwp(b),
                                                        rel=1e-12, abs=1e-12)

    def test_override(self):
        c = reg.DEFAULT_CONSTANTS.with_overrides(m2_per_kwp=5.0)
        assert reg.capacity_kwp(10.0, c.m2_per_kwp) == 2.0
        with pytest.raises(ValueError):
            reg.Constants(m2_per_kwp=0)


class TestAggregate:
    def test_two_small_pieces_kept(self):
        out = reg.aggregate([instance(4.0, sid="s1"), instance(4.0, sid="s2")])
        assert len(out) == 1
        e = out[0]
        assert e.instance_count == 2
        assert e.total_area_tilt_m2 == pytest.approx(8.0)
        assert e.surface_ids == ("s1", "s2")

    def test_threshold_boundary(self):
        out = reg.aggregate([instance(5.9, "a"), instance(6.0, "b"), instance(6.1, "c")])
        assert [e.address.house_number for e in out] == ["b", "c"]

    def test_sorted_by_key(self):
        out = reg.aggregate([instance(7.0, k) for k in "dbca"])
        keys = [e.canonical_key for e in out]
        assert keys == sorted(keys)

    def test_totals_are_sums(self):
        insts = [instance(3.0, "a", 20.0, "s1"), instance(5.0, "a", 35.0, "s2"), instance(9.0, "b")]
        out = {e.address.house_number: e for e in reg.aggregate(insts)}
        a = out["a"]
        assert a.total_area_tilt_m2 == pytest.approx(8.0, rel=1e-12)
        assert a.total_area_2d_m2 == pytest.approx(3 * math.cos(math.radians(20)) + 5 * math.cos(math.radians(35)))
        assert a.total_capacity_kwp == pytest.approx(8.0 / 6.5, rel=1e-12)

    @given(st.lists(st.tuples(st.floats(0.5, 50), st.sampled_from("abc"), st.floats(0, 60)),
                    min_size=1, max_size=12), st.floats(0.05, 0.95))
    def test_splitting_an_instance_leaves_totals(self, spec, frac):
        insts = [instance(a, k, t, f"s{n}") for n, (a, k, t) in enumerate(spec)]
        first = insts[0]
        # split the first instance into two pieces on the same surface with the same tilt
        pieces = [reg.PvInstance(first.pv_ref, first.surface_id, first.address, first.clipped_ring,
                                 first.area_2d_m2 * f, first.tilt_deg, first.area_tilt_m2 * f,
                                 first.capacity_kwp * f) for f in (frac, 1 - frac)]
        a = reg.aggregate(insts)
        b = reg.aggregate(pieces + insts[1:])
        assert [e.canonical_key for e in a] == [e.canonical_key for e in b]
        for x, y in zip(a, b):
            assert y.total_area_tilt_m2 == pytest.approx(x.total_area_tilt_m2, rel=1e-9)
            assert y.total_capacity_kwp == pytest.approx(x.total_capacity_kwp, rel=1e-9)

    def test_exact_polygons_reproduce_ground_truth(self):
        scene = synth.generate(synth.SceneSpec(seed=12, n_buildings=40, render_maps=False))
        out = reg.aggregate(reg.assign(scene.exact_pv_polygons(), scene.truth.buildings).instances)
        truth = scene.truth.registry
        assert [e.canonical_key for e in out] == [e.canonical_key for e in truth]
        for got, exp in zip(out, truth):
            assert got.total_capacity_kwp == pytest.approx(exp.total_capacity_kwp, rel=1e-6)
            assert got.total_area_tilt_m2 == pytest.approx(exp.total_area_tilt_m2, rel=1e-6)


class TestHistogram:
    def test_all_flat(self):
        h = reg.tilt_histogram([instance(7, tilt=0.0), instance(8, tilt=3.0)])
        assert h.flat_share == 1.0
        assert not any(h.counts)
        assert h.modal_bin is None

    def test_bin_10_15(self):
        h = reg.tilt_histogram([instance(7, tilt=t) for t in (12, 13, 14)])
        assert len(h.counts) == 18
        assert h.counts[2] == 3 and sum(h.counts) == 3
        assert h.modal_bin == (10.0, 15.0)

    def test_synthetic_city_mode(self):
        scene = synth.generate(synth.SceneSpec(seed=6, n_buildings=400, flat_probability=0.0,
                                               render_maps=False))
        assert reg.tilt_histogram(scene.truth.instances).modal_bin == (10.0, 15.0)

    def test_csv(self):
        h = reg.tilt_histogram([instance(7, tilt=t) for t in (0, 12, 44)])
        lines = reg.write_histogram(h).decode().splitlines()
        assert lines[0] == "bin_start_deg,bin_end_deg,count"
        assert "10,15,1" in lines and "40,45,1" in lines
        assert lines[-2] == "flat_share,,0.333333"


class TestRegistryCsv:
    def test_empty(self):
        assert reg.write_registry([]).decode() == ",".join(reg.REGISTRY_COLUMNS) + "\n"

    def test_one_entry(self):
        e = reg.RegistryEntry(ADDR, 1, 6.5, 6.5, 1.0, ("s1",))
        lines = reg.write_registry([e]).decode().splitlines()
        assert len(lines) == 2
        assert lines[1] == "musterweg|1|46236|bottrop,Musterweg,1,46236,Bottrop,1,6.500,6.500,1.000,s1"

    def test_round_trip(self):
        entries = [reg.RegistryEntry(bl.Address("Am Bahnhof, Nord", str(k), "46236", "Bottrop"), k + 1,
                                     round(7.25 * k + 6, 3), round(8.5 * k + 6, 3), round((8.5 * k + 6) / 6.5, 3),
                                     tuple(f"S{k}-R{j}" for j in range(k % 3 + 1)))
                   for k in range(5)]
        entries.sort(key=lambda e: e.canonical_key)
        blob = reg.write_registry(entries)
        assert reg.read_registry(blob) == entries
        assert reg.write_registry(reg.read_registry(blob)) == blob

    def test_bad_header(self):
        with pytest.raises(ParseError):
            reg.read_registry("a,b,c\n1,2,3\n")

    def test_bad_number(self):
        blob = reg.write_registry([reg.RegistryEntry(ADDR, 1, 6.5, 6.5, 1.0, ("s1",))]).decode()
        with pytest.raises(ParseError, match="line 2"):
            reg.read_registry(blob.replace("6.500,6.500", "six,6.500"))


def test_instances_round_trip_is_lossless():
    scene = synth.generate(synth.SceneSpec(seed=5, n_buildings=10, render_maps=False))
    out = reg.assign(scene.exact_pv_polygons(), scene.truth.buildings).instances
    blob = reg.write_instances(out)
    back = reg.read_instances(blob)
    assert tuple(back) == out
    assert reg.write_instances(back) == blob
