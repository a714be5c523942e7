import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from probetransit.capture import Sighting
from probetransit.mapping import (
    CANONICAL_RSSI,
    DeviceSpan,
    FilterParams,
    TripFrame,
    build_spans,
    canonical_grid,
    filter_sightings,
    map_to_stops,
    map_trip,
)
from probetransit.transit import StopTimeline
from scenario_support import SALT, build, ideal_config

TL = StopTimeline("T", "R", "outbound", ("s1", "s2", "s3"), (100_000, 200_000, 300_000))


def sighting(t_ms, dev=b"d" * 16, rssi=-50):
    return Sighting(t_ms, dev, False, rssi, "bus01")


def span(first_s, last_s, n=2):
    return DeviceSpan(b"x" * 16, first_s * 1000, last_s * 1000, n)


def test_canonical_grid_has_16_cells():
    grid = canonical_grid()
    assert len(grid) == 16
    assert {p.min_rssi for p in grid} == set(CANONICAL_RSSI)
    assert all(p.is_canonical for p in grid)
    assert not FilterParams(-72, True).is_canonical


def test_filter_params_range():
    with pytest.raises(ValueError):
        FilterParams(5, True)
    with pytest.raises(ValueError):
        FilterParams(-129, True)


def test_filter_identity_at_open_params():
    s = [sighting(1, rssi=-128), sighting(2, b"e" * 16, -1)]
    assert filter_sightings(s, FilterParams(-128, True)) == s


def test_filter_threshold_inclusive():
    s = [sighting(1, rssi=-90), sighting(2, rssi=-70), sighting(3, rssi=-50)]
    assert [x.rssi_dbm for x in filter_sightings(s, FilterParams(-70, True))] == [-70, -50]


def test_single_sighting_device_removed():
    s = [sighting(1, b"a" * 16), sighting(2, b"b" * 16), sighting(3, b"b" * 16)]
    kept = filter_sightings(s, FilterParams(-128, False))
    assert {x.device_id for x in kept} == {b"b" * 16}


def test_single_sighting_counted_after_rssi_cut():
    # two sightings, only one survives the RSSI cut, so the device is single
    s = [sighting(1, rssi=-90), sighting(2, rssi=-50)]
    assert filter_sightings(s, FilterParams(-60, False)) == []


def test_build_spans_examples():
    assert build_spans([]) == []
    got = build_spans([sighting(50_000), sighting(10_000)])
    assert got == [DeviceSpan(b"d" * 16, 10_000, 50_000, 2)]


def test_span_count_matches_simulated_devices():
    sc, _ = build(ideal_config(seed=3, p_device=0.7, p_random_mac=0.3))
    for tid, truth in sc.truth.items():
        timeline = sc.schedule.trip(tid)
        sightings = [s for s in sc.sightings(SALT)
                     if sc.assignments.resolve(s.sensor_id, s.instant) == tid]
        expected = len({s.device_id for s in sightings})
        assert len(build_spans(sightings)) == expected
        devices = sum(1 for p in truth.passengers if p[2])
        assert expected >= devices
        assert timeline.trip_id == tid


@pytest.mark.parametrize("first,last,margin,expected", [
    (150, 250, 60, (0, 2)),
    (150, 150, 60, (0, 1)),
    (90, 310, 30, (0, 2)),
    (100, 200, 60, (0, 1)),
    (200, 300, 60, (1, 2)),
    (199.999, 200.001, 60, (0, 2)),
])
def test_map_to_stops_examples(first, last, margin, expected):
    m = map_to_stops(span(first, last), TL, boundary_margin=margin)
    assert (m.entry_stop_index, m.exit_stop_index) == expected


def test_span_outside_margined_window():
    assert map_to_stops(span(10, 60), TL, boundary_margin=30) is None
    assert map_to_stops(span(331, 400), TL, boundary_margin=30) is None
    assert map_to_stops(span(10, 70), TL, boundary_margin=30) is not None


@given(st.lists(st.integers(-128, 0), min_size=1, max_size=40), st.integers(-128, 0), st.integers(-128, 0))
def test_filter_monotone_in_threshold(rssis, lo, hi):
    lo, hi = min(lo, hi), max(lo, hi)
    s = [sighting(k, bytes([k % 5]) * 16, r) for k, r in enumerate(rssis)]
    for inc in (True, False):
        weak = filter_sightings(s, FilterParams(lo, inc))
        strong = filter_sightings(s, FilterParams(hi, inc))
        assert set(strong) <= set(weak)


@given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 400_000), st.integers(-128, 0)), max_size=60),
       st.sampled_from(CANONICAL_RSSI), st.booleans(), st.sampled_from([0, 30, 60]))
@settings(max_examples=300)
def test_frame_agrees_with_scalar_path(rows, min_rssi, inc, margin):
    sightings = [sighting(t, bytes([d]) * 16, r) for d, t, r in rows]
    params = FilterParams(min_rssi, inc)
    _, scalar = map_trip(sightings, TL, params, boundary_margin=margin)
    frame = TripFrame(TL, sightings, boundary_margin=margin)
    _, codes, entry, exit_ = frame.mappings(params)
    vector = {(frame.device_ids[c], int(e), int(x)) for c, e, x in zip(codes, entry, exit_)}
    assert vector == {(m.device_id, m.entry_stop_index, m.exit_stop_index) for m in scalar}


def test_random_filter_accounting():
    rng = random.Random(2)
    sightings = []
    singles = set()
    for d in range(200):
        dev = d.to_bytes(16, "big")
        k = rng.choice([1, 1, 2, 5])
        if k == 1:
            singles.add(dev)
        for _ in range(k):
            sightings.append(sighting(rng.randrange(100_000, 300_000), dev))
    _, with_random = map_trip(sightings, TL, FilterParams(-128, True))
    _, without = map_trip(sightings, TL, FilterParams(-128, False))
    assert len(with_random) - len(without) == len(singles)
    assert not singles & {m.device_id for m in without}


def test_frame_from_arrays_matches_constructor():
    rng = np.random.default_rng(0)
    dev = rng.integers(0, 20, size=300)
    times = rng.integers(0, 420_000, size=300)
    rssi = rng.integers(-100, -30, size=300)
    ids = [bytes([k]) * 16 for k in range(20)]
    sightings = [sighting(int(t), ids[d], int(r)) for d, t, r in zip(dev, times, rssi)]
    a = TripFrame(TL, sightings)
    b = TripFrame.from_arrays(TL, ids, dev, times, rssi)
    pa = FilterParams(-70, False)
    ma, mb = a.mappings(pa), b.mappings(pa)
    as_set = lambda f, m: {(f.device_ids[c], int(e), int(x)) for c, e, x in zip(*m[1:])}  # noqa: E731
    assert as_set(a, ma) == as_set(b, mb)
