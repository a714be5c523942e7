"""Schedules, vehicle-to-trip assignments and ticketing ground truth.

File formats (GTFS-like subset)::

    stops.csv        stop_id,name,lat,lon
    trips.csv        trip_id,route_id,direction
    stop_times.csv   trip_id,seq,stop_id,arrival
    assignments.csv  sensor_id,trip_id,start,end
    tickets.csv      instant,route_id,stop_id[,trip_id]

Instants are ISO-8601 UTC or integer epoch milliseconds. Loaders take CSV
text, a text stream, or a ``Path``.
"""

import bisect
import csv
import io
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ScheduleError
from .timeutil import parse_instant

log = logging.getLogger(__name__)

DEFAULT_TICKET_GRACE_SECONDS = 120.0
DIRECTIONS = ("outbound", "inbound")
_DIRECTION_ALIASES = {"0": "outbound", "1": "inbound", "outbound": "outbound", "inbound": "inbound"}


@dataclass(frozen=True)
class Stop:
    stop_id: str
    name: str = ""
    lat: float | None = None
    lon: float | None = None


@dataclass(frozen=True)
class StopTimeline:
    trip_id: str
    route_id: str
    direction: str
    stop_ids: tuple
    arrivals: tuple  # epoch ms, strictly increasing

    def __post_init__(self):
        if len(self.stop_ids) < 2:
            raise ScheduleError(f"trip {self.trip_id}: needs at least 2 stops")
        if len(self.stop_ids) != len(self.arrivals):
            raise ScheduleError(f"trip {self.trip_id}: stop and arrival counts differ")
        for a, b in zip(self.arrivals, self.arrivals[1:]):
            if b <= a:
                raise ScheduleError(f"trip {self.trip_id}: non-increasing arrival")
        if self.direction not in DIRECTIONS:
            raise ScheduleError(f"trip {self.trip_id}: unknown direction {self.direction!r}")

    @property
    def n_stops(self):
        return len(self.stop_ids)

    @property
    def start(self):
        return self.arrivals[0]

    @property
    def end(self):
        return self.arrivals[-1]

    def arrival_array(self):
        return np.asarray(self.arrivals, dtype=np.int64)


@dataclass(frozen=True)
class VehicleAssignment:
    sensor_id: str
    trip_id: str
    start: int
    end: int  # exclusive


@dataclass(frozen=True)
class TicketValidation:
    instant: int
    route_id: str
    stop_id: str
    trip_id: str | None = None


def _reader(src, required, what):
    if isinstance(src, Path):
        src = src.read_text()
    stream = io.StringIO(src) if isinstance(src, str) else src
    reader = csv.DictReader(stream)
    fields = reader.fieldnames or []
    missing = [c for c in required if c not in fields]
    if missing:
        raise FormatError(f"{what} missing required column(s): {', '.join(missing)}")
    return reader


class Schedule:
    """Immutable index of stops and trip timelines."""

    def __init__(self, stops, timelines):
        self.stops = dict(stops)
        self.trips = {t.trip_id: t for t in timelines}
        by_route = defaultdict(list)
        for t in timelines:
            by_route[t.route_id].append(t)
        self._by_route = {r: sorted(ts, key=lambda t: (t.start, t.trip_id)) for r, ts in by_route.items()}
        self._route_stops = {r: {s for t in ts for s in t.stop_ids} for r, ts in self._by_route.items()}

    def __len__(self):
        return len(self.trips)

    def trip(self, trip_id):
        return self.trips[trip_id]

    def route_ids(self):
        return sorted(self._by_route)

    def trips_for_route(self, route_id):
        return list(self._by_route.get(route_id, ()))

    def route_has_stop(self, route_id, stop_id):
        return stop_id in self._route_stops.get(route_id, ())


def load_schedule(stops_csv, trips_csv, stop_times_csv):
    """Build a :class:`Schedule`; any referential or ordering violation is fatal."""
    stops = {}
    r = _reader(stops_csv, ("stop_id",), "stops.csv")
    for row in r:
        sid = (row["stop_id"] or "").strip()
        if not sid:
            raise ScheduleError(f"stops.csv line {r.line_num}: empty stop_id")
        if sid in stops:
            raise ScheduleError(f"stops.csv line {r.line_num}: duplicate stop_id {sid!r}")
        lat = row.get("lat") or None
        lon = row.get("lon") or None
        stops[sid] = Stop(sid, row.get("name") or "", float(lat) if lat else None,
                          float(lon) if lon else None)

    trips = {}
    r = _reader(trips_csv, ("trip_id", "route_id", "direction"), "trips.csv")
    for row in r:
        tid = (row["trip_id"] or "").strip()
        if tid in trips:
            raise ScheduleError(f"trips.csv line {r.line_num}: duplicate trip_id {tid!r}")
        direction = _DIRECTION_ALIASES.get((row["direction"] or "").strip().lower())
        if direction is None:
            raise ScheduleError(f"trips.csv line {r.line_num}: bad direction {row['direction']!r}")
        trips[tid] = ((row["route_id"] or "").strip(), direction)

    rows = defaultdict(list)
    r = _reader(stop_times_csv, ("trip_id", "seq", "stop_id", "arrival"), "stop_times.csv")
    for row in r:
        line = r.line_num
        tid, sid = row["trip_id"].strip(), row["stop_id"].strip()
        if tid not in trips:
            raise ScheduleError(f"stop_times.csv line {line}: unknown trip {tid!r}")
        if sid not in stops:
            raise ScheduleError(f"stop_times.csv line {line}: unknown stop {sid!r}")
        try:
            seq = int(row["seq"])
            arrival = parse_instant(row["arrival"])
        except ValueError as exc:
            raise ScheduleError(f"stop_times.csv line {line}: {exc}") from None
        rows[tid].append((seq, sid, arrival, line))

    timelines = []
    for tid, (route_id, direction) in trips.items():
        entries = sorted(rows.get(tid, ()))
        if len(entries) < 2:
            raise ScheduleError(f"trip {tid}: needs at least 2 stop_times rows, has {len(entries)}")
        for prev, cur in zip(entries, entries[1:]):
            if cur[0] == prev[0]:
                raise ScheduleError(f"stop_times.csv line {cur[3]}: duplicate seq {cur[0]} in trip {tid}")
            if cur[2] <= prev[2]:
                raise ScheduleError(
                    f"stop_times.csv line {cur[3]}: non-increasing arrival in trip {tid} "
                    f"(after line {prev[3]})")
        timelines.append(StopTimeline(tid, route_id, direction,
                                      tuple(e[1] for e in entries), tuple(e[2] for e in entries)))
    return Schedule(stops, timelines)


def load_schedule_dir(path):
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f"schedule directory not found: {path}")
    return load_schedule(*(path / name for name in ("stops.csv", "trips.csv", "stop_times.csv")))


class Assignments:
    """Per-sensor, start-sorted, non-overlapping trip spans (start-inclusive, end-exclusive)."""

    def __init__(self, assignments):
        per_sensor = defaultdict(list)
        for a in assignments:
            if a.end <= a.start:
                raise ScheduleError(f"assignment {a.sensor_id}/{a.trip_id}: empty span")
            per_sensor[a.sensor_id].append(a)
        self._spans = {}
        for sensor, spans in per_sensor.items():
            spans.sort(key=lambda a: a.start)
            for prev, cur in zip(spans, spans[1:]):
                if cur.start < prev.end:
                    raise ScheduleError(
                        f"sensor {sensor}: assignments {prev.trip_id} and {cur.trip_id} overlap")
            self._spans[sensor] = (spans, [a.start for a in spans])

    def __iter__(self):
        for spans, _ in self._spans.values():
            yield from spans

    def sensors(self):
        return sorted(self._spans)

    def resolve(self, sensor_id, instant):
        entry = self._spans.get(sensor_id)
        if entry is None:
            return None
        spans, starts = entry
        k = bisect.bisect_right(starts, instant) - 1
        if k >= 0 and instant < spans[k].end:
            return spans[k].trip_id
        return None


def load_assignments(src, schedule=None):
    r = _reader(src, ("sensor_id", "trip_id", "start", "end"), "assignments.csv")
    out = []
    for row in r:
        try:
            a = VehicleAssignment(row["sensor_id"].strip(), row["trip_id"].strip(),
                                  parse_instant(row["start"]), parse_instant(row["end"]))
        except ValueError as exc:
            raise ScheduleError(f"assignments.csv line {r.line_num}: {exc}") from None
        if schedule is not None and a.trip_id not in schedule.trips:
            raise ScheduleError(f"assignments.csv line {r.line_num}: unknown trip {a.trip_id!r}")
        out.append(a)
    return Assignments(out)


def resolve_trip(sensor_id, instant, assignments):
    """Trip whose assignment span holds ``instant`` for this sensor, or None."""
    return assignments.resolve(sensor_id, instant)


def load_tickets(src, schedule=None, rejects=None):
    """Read validations; rows naming a stop outside their route are tallied and dropped."""
    r = _reader(src, ("instant", "route_id", "stop_id"), "tickets.csv")
    rejects = rejects if rejects is not None else Counter()
    out = []
    for row in r:
        try:
            instant = parse_instant(row["instant"])
        except ValueError:
            rejects["bad_instant"] += 1
            continue
        route, stop = row["route_id"].strip(), (row["stop_id"] or "").strip()
        if schedule is not None and stop and not schedule.route_has_stop(route, stop):
            rejects["unknown_stop"] += 1
            continue
        trip = (row.get("trip_id") or "").strip() or None
        out.append(TicketValidation(instant, route, stop, trip))
    if rejects:
        log.warning("ticket rows rejected: %s", dict(rejects))
    return out


def assign_validations(schedule, validations, grace_seconds=DEFAULT_TICKET_GRACE_SECONDS):
    """Group validations by trip_id.

    Rows without trip_id go to the route's trip whose window
    ``[first arrival, last arrival + grace)`` holds the instant (latest start
    wins); failing that, to the trip starting within ``grace`` after it.
    """
    grace = int(round(grace_seconds * 1000))
    grouped = defaultdict(list)
    unmatched = 0
    starts = {r: [t.start for t in schedule.trips_for_route(r)] for r in schedule.route_ids()}
    for v in validations:
        if v.trip_id is not None:
            grouped[v.trip_id].append(v)
            continue
        trips = schedule.trips_for_route(v.route_id)
        k = bisect.bisect_right(starts.get(v.route_id, []), v.instant) - 1
        chosen = None
        for j in range(k, -1, -1):
            if v.instant < trips[j].end + grace:
                chosen = trips[j]
                break
        if chosen is None and k + 1 < len(trips) and trips[k + 1].start - v.instant <= grace:
            chosen = trips[k + 1]
        if chosen is None:
            unmatched += 1
            continue
        grouped[chosen.trip_id].append(v)
    if unmatched:
        log.info("%d validation(s) matched no trip", unmatched)
    return dict(grouped)


def ticket_counts(trip, validations, grace_seconds=DEFAULT_TICKET_GRACE_SECONDS, rejects=None):
    """Vector b: validations per stop of ``trip``.

    A validation naming a stop is counted at that stop; when the stop occurs
    more than once, at the occurrence whose arrival is nearest in time. A
    validation without a stop maps by time: ``[arrival_t, arrival_t+1)`` to stop t, before the
    first arrival to stop 0. Anything later than the last arrival plus
    ``grace_seconds`` is rejected and tallied in ``rejects``.
    """
    rejects = rejects if rejects is not None else Counter()
    arrivals = trip.arrivals
    last = trip.n_stops - 1
    limit = arrivals[-1] + int(round(grace_seconds * 1000))
    positions = defaultdict(list)
    for k, sid in enumerate(trip.stop_ids):
        positions[sid].append(k)

    b = np.zeros(trip.n_stops, dtype=np.int64)
    for v in validations:
        if v.instant > limit:
            rejects["late"] += 1
            continue
        where = positions.get(v.stop_id) if v.stop_id else None
        if v.stop_id and not where:
            rejects["stop_not_in_trip"] += 1
            continue
        if where is None:
            t = min(max(bisect.bisect_right(arrivals, v.instant) - 1, 0), last)
        elif len(where) == 1:
            t = where[0]
        else:
            t = min(where, key=lambda k: (abs(arrivals[k] - v.instant), k))
        b[t] += 1
    return b
