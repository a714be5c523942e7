"""RSSI / single-sighting filtering and entry/exit stop assignment.

Interval conventions (all instants epoch ms, ``a`` the arrival vector):

* entry stop t:  first_seen in ``[a[t], a[t+1])``; before ``a[0]`` clamps to 0.
* exit stop t:   last_seen in ``(a[t-1], a[t]]``; after ``a[-1]`` clamps to the
  last stop; never below 1.
* spans lying wholly outside ``[a[0] - margin, a[-1] + margin]`` are not mapped.

The plain functions operate on :class:`~probetransit.capture.Sighting` lists;
:class:`TripFrame` does the same work on numpy arrays for the calibration sweep.
"""

import bisect
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .capture import RSSI_MAX, RSSI_MIN

CANONICAL_RSSI = (-128, -85, -80, -75, -70, -65, -60, -55)
DEFAULT_BOUNDARY_MARGIN_SECONDS = 60.0


@dataclass(frozen=True, order=True)
class FilterParams:
    min_rssi: int
    include_random: bool

    def __post_init__(self):
        if not RSSI_MIN <= self.min_rssi <= RSSI_MAX:
            raise ValueError(f"min_rssi {self.min_rssi} outside [{RSSI_MIN}, {RSSI_MAX}]")

    @property
    def is_canonical(self):
        return self.min_rssi in CANONICAL_RSSI


def canonical_grid(rssi_values=CANONICAL_RSSI, include_random=(True, False)):
    return [FilterParams(r, inc) for r in rssi_values for inc in include_random]


@dataclass(frozen=True)
class DeviceSpan:
    device_id: bytes
    first_seen: int
    last_seen: int
    sighting_count: int


@dataclass(frozen=True)
class StopMapping:
    device_id: bytes
    entry_stop_index: int
    exit_stop_index: int


def margin_ms(seconds):
    return int(round(seconds * 1000))


def in_trip_window(sightings, timeline, boundary_margin=DEFAULT_BOUNDARY_MARGIN_SECONDS):
    lo = timeline.start - margin_ms(boundary_margin)
    hi = timeline.end + margin_ms(boundary_margin)
    return [s for s in sightings if lo <= s.instant <= hi]


def filter_sightings(sightings, params):
    kept = [s for s in sightings if s.rssi_dbm >= params.min_rssi]
    if params.include_random:
        return kept
    counts = Counter(s.device_id for s in kept)
    return [s for s in kept if counts[s.device_id] > 1]


def build_spans(sightings):
    acc = {}
    for s in sightings:
        cur = acc.get(s.device_id)
        if cur is None:
            acc[s.device_id] = [s.instant, s.instant, 1]
        else:
            cur[0] = min(cur[0], s.instant)
            cur[1] = max(cur[1], s.instant)
            cur[2] += 1
    spans = [DeviceSpan(d, f, l, n) for d, (f, l, n) in acc.items()]
    spans.sort(key=lambda sp: (sp.first_seen, sp.device_id))
    return spans


def map_to_stops(span, timeline, boundary_margin=DEFAULT_BOUNDARY_MARGIN_SECONDS):
    a = timeline.arrivals
    m = margin_ms(boundary_margin)
    if span.last_seen < a[0] - m or span.first_seen > a[-1] + m:
        return None
    last = len(a) - 1
    entry = min(max(bisect.bisect_right(a, span.first_seen) - 1, 0), last)
    exit_ = max(min(bisect.bisect_left(a, span.last_seen), last), 1)
    return StopMapping(span.device_id, entry, exit_)


def map_trip(sightings, timeline, params, boundary_margin=DEFAULT_BOUNDARY_MARGIN_SECONDS):
    """Filter, span and map one trip's sightings; returns (filtered, mappings)."""
    window = in_trip_window(sightings, timeline, boundary_margin)
    filtered = filter_sightings(window, params)
    mappings = []
    for span in build_spans(filtered):
        m = map_to_stops(span, timeline, boundary_margin)
        if m is not None:
            mappings.append(m)
    return filtered, mappings


def map_indices(first, last, arrivals):
    """Vectorized entry/exit indices for spans already inside the margined window."""
    n_last = len(arrivals) - 1
    entry = np.clip(np.searchsorted(arrivals, first, side="right") - 1, 0, n_last)
    exit_ = np.clip(np.searchsorted(arrivals, last, side="left"), 1, n_last)
    return entry, exit_


class TripFrame:
    """One trip's in-window sightings as arrays sorted by (device, instant)."""

    def __init__(self, timeline, sightings, boundary_margin=DEFAULT_BOUNDARY_MARGIN_SECONDS):
        self.timeline = timeline
        self.boundary_margin = boundary_margin
        self.arrivals = timeline.arrival_array()
        window = in_trip_window(sightings, timeline, boundary_margin)
        codes = {}
        dev = np.fromiter((codes.setdefault(s.device_id, len(codes)) for s in window),
                          dtype=np.int64, count=len(window))
        times = np.fromiter((s.instant for s in window), dtype=np.int64, count=len(window))
        rssi = np.fromiter((s.rssi_dbm for s in window), dtype=np.int64, count=len(window))
        order = np.lexsort((times, dev))
        self.device_ids = list(codes)
        self.dev, self.times, self.rssi = dev[order], times[order], rssi[order]

    @classmethod
    def from_arrays(cls, timeline, device_ids, dev, times, rssi,
                    boundary_margin=DEFAULT_BOUNDARY_MARGIN_SECONDS):
        self = cls.__new__(cls)
        self.timeline = timeline
        self.boundary_margin = boundary_margin
        self.arrivals = timeline.arrival_array()
        m = margin_ms(boundary_margin)
        keep = (times >= timeline.start - m) & (times <= timeline.end + m)
        dev, times, rssi = dev[keep], times[keep], rssi[keep]
        order = np.lexsort((times, dev))
        self.device_ids = list(device_ids)
        self.dev, self.times, self.rssi = dev[order], times[order], rssi[order]
        return self

    def __len__(self):
        return len(self.times)

    def select(self, params):
        """Boolean mask of sightings surviving ``params`` (order preserved)."""
        mask = self.rssi >= params.min_rssi
        if params.include_random or not mask.any():
            return mask
        counts = np.bincount(self.dev[mask], minlength=len(self.device_ids))
        return mask & (counts[self.dev] > 1)

    def spans(self, mask):
        """(device codes, first_seen, last_seen, counts) of the selected sightings."""
        dev, times = self.dev[mask], self.times[mask]
        if len(dev) == 0:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty, empty, empty
        starts = np.flatnonzero(np.r_[True, dev[1:] != dev[:-1]])
        ends = np.r_[starts[1:], len(dev)]
        return dev[starts], times[starts], times[ends - 1], ends - starts

    def mappings(self, params):
        mask = self.select(params)
        codes, first, last, _ = self.spans(mask)
        entry, exit_ = map_indices(first, last, self.arrivals)
        return mask, codes, entry, exit_
