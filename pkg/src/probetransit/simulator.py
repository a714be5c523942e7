"""Synthetic, fully ground-truthed transit scenarios.

Randomness comes exclusively from ``numpy.random.PCG64`` seeded through a
``SeedSequence``. Every trip gets its own child sequence, split further into
independent streams for itineraries, device probes and noise devices. Changing
one knob (say the probe interval) therefore leaves the other draws untouched.
"""

import ast
import configparser
import csv
import dataclasses
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .capture import (LINKTYPE_RADIOTAP, RSSI_MAX, RSSI_MIN, Sighting, anonymize_mac,
                      build_probe_request, write_pcap)
from .errors import ConfigError
from .load import TripObservation
from .timeutil import format_instant, parse_instant
from .transit import Assignments, Schedule, Stop, StopTimeline, TicketValidation, VehicleAssignment

log = logging.getLogger(__name__)

_MAX_REDRAWS = 1000


@dataclass
class ScenarioConfig:
    seed: int = 42
    n_routes: int = 2
    n_trips_per_route: int = 5
    n_stops_per_trip: int = 8
    n_vehicles: int = 0  # 0: one vehicle per route
    segment_seconds: float = 120.0
    layover_seconds: float = 600.0
    assignment_pad_seconds: float = 120.0
    start: str = "2020-01-06T07:00:00Z"
    passengers_per_trip: float = 10.0
    passengers_dist: str = "poisson"  # "constant" | "poisson"
    probe_interval_seconds: float = 30.0
    guarantee_segment_probe: bool = False
    p_device: float = 0.8
    p_random_mac: float = 0.2
    n_noise_devices: int = 5
    noise_probes: float = 3.0
    noise_window_seconds: float = 30.0
    onboard_rssi: tuple = (-75, -40)
    noise_rssi: tuple = (-95, -70)
    max_load: int = 83
    ticket_lag_seconds: float = 0.0

    def validate(self):
        def bad(name, why):
            raise ConfigError(f"{name}: {why}")

        for name in ("n_routes", "n_trips_per_route"):
            if getattr(self, name) < 1:
                bad(name, "must be >= 1")
        if self.n_stops_per_trip < 2:
            bad("n_stops_per_trip", "a trip needs at least 2 stops")
        if self.n_vehicles < 0:
            bad("n_vehicles", "must be >= 0")
        for name in ("segment_seconds", "probe_interval_seconds"):
            if not getattr(self, name) > 0:
                bad(name, "must be positive")
        if self.segment_seconds < 0.004:
            bad("segment_seconds", "too short for millisecond timestamps")
        if self.layover_seconds <= 2 * self.assignment_pad_seconds:
            bad("layover_seconds", "must exceed twice assignment_pad_seconds")
        if self.noise_window_seconds > self.assignment_pad_seconds:
            bad("noise_window_seconds", "must not exceed assignment_pad_seconds")
        for name in ("passengers_per_trip", "noise_probes", "noise_window_seconds", "ticket_lag_seconds",
                     "assignment_pad_seconds"):
            if getattr(self, name) < 0:
                bad(name, "must be >= 0")
        if self.noise_probes < 1 and self.n_noise_devices:
            bad("noise_probes", "noise devices emit at least one probe")
        if self.passengers_dist not in ("constant", "poisson"):
            bad("passengers_dist", "must be 'constant' or 'poisson'")
        for name in ("p_device", "p_random_mac"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                bad(name, "probability outside [0, 1]")
        if self.n_noise_devices < 0:
            bad("n_noise_devices", "must be >= 0")
        for name in ("onboard_rssi", "noise_rssi"):
            rng = getattr(self, name)
            if len(rng) != 2 or not RSSI_MIN <= rng[0] <= rng[1] <= RSSI_MAX:
                bad(name, f"need lo <= hi within [{RSSI_MIN}, {RSSI_MAX}]")
        if self.max_load < 1:
            bad("max_load", "must be >= 1")
        try:
            parse_instant(self.start)
        except ValueError as exc:
            bad("start", str(exc))
        return self


_BOOL = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}


def _coerce(name, kind, raw):
    try:
        if kind is bool:
            if isinstance(raw, bool):
                return raw
            return _BOOL[str(raw).strip().lower()]
        if kind is tuple:
            value = ast.literal_eval(raw) if isinstance(raw, str) else raw
            return tuple(int(v) for v in value)
        if kind is str:
            return str(raw).strip().strip('"').strip("'")
        return kind(ast.literal_eval(raw) if isinstance(raw, str) else raw)
    except (ValueError, SyntaxError, KeyError, TypeError):
        raise ConfigError(f"{name}: cannot read {raw!r} as {kind.__name__}") from None


_FIELD_TYPES = {"int": int, "float": float, "str": str, "bool": bool, "tuple": tuple}


def config_from_mapping(values, **overrides):
    kinds = {f.name: _FIELD_TYPES[f.type] if isinstance(f.type, str) else f.type
             for f in dataclasses.fields(ScenarioConfig)}
    kwargs = {}
    for key, raw in {**values, **overrides}.items():
        if raw is None:
            continue
        if key not in kinds:
            raise ConfigError(f"{key}: unknown scenario field")
        kwargs[key] = _coerce(key, kinds[key], raw)
    return ScenarioConfig(**kwargs).validate()


def read_config_text(text):
    """Parse ``key = value`` lines (``#`` comments) into a dict of raw strings."""
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string("[config]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"config file: {exc}") from None
    return dict(parser["config"])


def load_scenario_config(path, **overrides):
    return config_from_mapping(read_config_text(Path(path).read_text()), **overrides)


@dataclass
class RawProbe:
    sensor_id: str
    instant: int
    mac: bytes
    rssi: int


@dataclass
class TripTruth:
    trip_id: str
    route_id: str
    stops: list
    boardings: list
    alightings: list
    load: list
    passengers: list  # [entry, exit, has_device, randomizing]


@dataclass
class Scenario:
    config: ScenarioConfig
    schedule: Schedule
    assignments: Assignments
    probes: list
    tickets: list
    truth: dict = field(default_factory=dict)

    def sightings(self, salt):
        """Anonymize the raw probes the way the capture path would."""
        cache = {}
        out = []
        for p in self.probes:
            hit = cache.get(p.mac)
            if hit is None:
                hit = cache[p.mac] = anonymize_mac(p.mac, salt)
            out.append(Sighting(p.instant, hit[0], hit[1], p.rssi, p.sensor_id))
        return out

    def write(self, out_dir, pcap=False):
        write_scenario(self, out_dir, pcap=pcap)


def _mac_global(rng):
    b = bytearray(rng.integers(0, 256, size=6, dtype=np.uint8).tobytes())
    b[0] &= 0xFC
    return bytes(b)


def _mac_random(rng):
    b = bytearray(rng.integers(0, 256, size=6, dtype=np.uint8).tobytes())
    b[0] = (b[0] | 0x02) & 0xFE
    return bytes(b)


def _probe_times(rng, arrivals, entry, exit_, interval_ms, guarantee):
    lo, hi = arrivals[entry], arrivals[exit_]
    span = hi - lo
    times = []
    t = 0.0
    while True:
        t += rng.exponential(interval_ms)
        if t >= span:
            break
        times.append(lo + int(t))
    times = [min(max(x, lo + 1), hi - 1) for x in times]
    if guarantee:
        for seg in range(entry, exit_):
            a, b = arrivals[seg], arrivals[seg + 1]
            if not any(a < x < b for x in times):
                times.append(int(rng.integers(a + 1, b)))
        times.sort()
    return times


def _draw_itineraries(rng, cfg, n_stops):
    if cfg.passengers_dist == "constant":
        n_pass = int(round(cfg.passengers_per_trip))
    else:
        n_pass = int(rng.poisson(cfg.passengers_per_trip))
    load = np.zeros(n_stops - 1, dtype=np.int64)
    out = []
    for _ in range(n_pass):
        for _attempt in range(_MAX_REDRAWS):
            e = int(rng.integers(0, n_stops - 1))
            x = int(rng.integers(e + 1, n_stops))
            if load[e:x].max() < cfg.max_load:
                load[e:x] += 1
                out.append((e, x))
                break
        else:
            log.warning("passenger dropped: no itinerary fits under max_load=%d", cfg.max_load)
    return out


def generate_scenario(config):
    """Build a :class:`Scenario`; identical configs (seed included) give identical scenarios."""
    cfg = config.validate()
    n = cfg.n_stops_per_trip
    seg_ms = int(round(cfg.segment_seconds * 1000))
    layover_ms = int(round(cfg.layover_seconds * 1000))
    pad_ms = int(round(cfg.assignment_pad_seconds * 1000))
    noise_ms = int(round(cfg.noise_window_seconds * 1000))
    interval_ms = cfg.probe_interval_seconds * 1000
    lag_ms = int(round(cfg.ticket_lag_seconds * 1000))
    base = parse_instant(cfg.start)
    n_vehicles = cfg.n_vehicles or cfg.n_routes
    sensors = [f"bus{v + 1:02d}" for v in range(n_vehicles)]

    stops = {}
    route_stops = {}
    for r in range(cfg.n_routes):
        ids = [f"R{r + 1}S{j + 1:02d}" for j in range(n)]
        route_stops[r] = ids
        for sid in ids:
            stops[sid] = Stop(sid, sid)

    root = np.random.SeedSequence(cfg.seed)
    n_total = cfg.n_routes * cfg.n_trips_per_route
    trip_seqs = root.spawn(n_total)

    vehicle_free = [base] * n_vehicles
    timelines, assignments, probes, tickets = [], [], [], []
    truth = {}
    g = 0
    for k in range(cfg.n_trips_per_route):
        for r in range(cfg.n_routes):
            route_id = str(r + 1)
            direction = "outbound" if k % 2 == 0 else "inbound"
            seq_ids = route_stops[r] if direction == "outbound" else route_stops[r][::-1]
            trip_id = f"R{r + 1}-T{k + 1:03d}"
            v = g % n_vehicles
            start = vehicle_free[v]
            arrivals = [start + j * seg_ms for j in range(n)]
            vehicle_free[v] = arrivals[-1] + layover_ms
            sensor = sensors[v]
            timelines.append(StopTimeline(trip_id, route_id, direction, tuple(seq_ids), tuple(arrivals)))
            assignments.append(VehicleAssignment(sensor, trip_id, start - pad_ms, arrivals[-1] + pad_ms))

            pax_ss, dev_ss, noise_ss = trip_seqs[g].spawn(3)
            pax_rng = np.random.Generator(np.random.PCG64(pax_ss))
            dev_rng = np.random.Generator(np.random.PCG64(dev_ss))
            noise_rng = np.random.Generator(np.random.PCG64(noise_ss))
            g += 1

            itineraries = _draw_itineraries(pax_rng, cfg, n)
            passengers = []
            for e, x in itineraries:
                has_device = bool(pax_rng.random() < cfg.p_device)
                randomizing = has_device and bool(pax_rng.random() < cfg.p_random_mac)
                passengers.append([e, x, has_device, randomizing])
                tickets.append(TicketValidation(arrivals[e] + lag_ms, route_id, seq_ids[e], trip_id))

            for e, x, has_device, randomizing in passengers:
                if not has_device:
                    continue
                times = _probe_times(dev_rng, arrivals, e, x, interval_ms, cfg.guarantee_segment_probe)
                rssi = dev_rng.integers(cfg.onboard_rssi[0], cfg.onboard_rssi[1] + 1, size=len(times))
                mac = _mac_global(dev_rng)
                for t, s in zip(times, rssi):
                    probes.append(RawProbe(sensor, t, _mac_random(dev_rng) if randomizing else mac, int(s)))

            for _ in range(cfg.n_noise_devices):
                stop = int(noise_rng.integers(0, n))
                count = 1 + int(noise_rng.poisson(cfg.noise_probes - 1))
                offsets = noise_rng.integers(-noise_ms, noise_ms + 1, size=count)
                rssi = noise_rng.integers(cfg.noise_rssi[0], cfg.noise_rssi[1] + 1, size=count)
                mac = _mac_global(noise_rng)
                for off, s in zip(offsets, rssi):
                    probes.append(RawProbe(sensor, arrivals[stop] + int(off), mac, int(s)))

            boardings = [0] * n
            alightings = [0] * n
            for e, x, _, _ in passengers:
                boardings[e] += 1
                alightings[x] += 1
            load, cur = [], 0
            for t in range(n):
                cur += boardings[t] - alightings[t]
                load.append(cur)
            truth[trip_id] = TripTruth(trip_id, route_id, list(seq_ids), boardings, alightings, load, passengers)

    probes.sort(key=lambda p: (p.sensor_id, p.instant, p.mac))
    tickets.sort(key=lambda t: (t.instant, t.trip_id, t.stop_id))
    return Scenario(cfg, Schedule(stops, timelines), Assignments(assignments), probes, tickets, truth)


def oracle_counts(truth):
    """Vectors a perfect sensor would report, counted directly from itineraries.

    ``b`` counts every passenger; ``i``/``o``/``c``/``w`` count device carriers.
    """
    out = {}
    for tid, tt in truth.items():
        n = len(tt.stops)
        b = [0] * n
        i = [0] * n
        o = [0] * n
        onboard = [0] * n
        for e, x, has_device, _ in tt.passengers:
            b[e] += 1
            if has_device:
                i[e] += 1
                o[x] += 1
                for t in range(e, x):
                    onboard[t] += 1
        arr = lambda v: np.array(v, dtype=np.int64)  # noqa: E731
        out[tid] = TripObservation(tid, tt.route_id, list(tt.stops), arr(b), arr(i), arr(o),
                                   arr(onboard), arr(onboard))
    return out


# --------------------------------------------------------------------------
# files


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def truth_json(scenario):
    return {
        "config": {k: (list(v) if isinstance(v, tuple) else v)
                   for k, v in dataclasses.asdict(scenario.config).items()},
        "trips": {
            tid: {
                "route_id": tt.route_id,
                "stops": tt.stops,
                "boardings": tt.boardings,
                "alightings": tt.alightings,
                "load": tt.load,
                "passengers": tt.passengers,
            }
            for tid, tt in sorted(scenario.truth.items())
        },
    }


def read_truth_json(data):
    return {tid: TripTruth(tid, d["route_id"], d["stops"], d["boardings"], d["alightings"], d["load"],
                           [list(p) for p in d["passengers"]])
            for tid, d in data["trips"].items()}


def write_scenario(scenario, out_dir, pcap=False):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sched = scenario.schedule
    _write_csv(out / "stops.csv", ("stop_id", "name", "lat", "lon"),
               [[s.stop_id, s.name, "", ""] for s in sched.stops.values()])
    trips = sorted(sched.trips.values(), key=lambda t: t.trip_id)
    _write_csv(out / "trips.csv", ("trip_id", "route_id", "direction"),
               [[t.trip_id, t.route_id, t.direction] for t in trips])
    _write_csv(out / "stop_times.csv", ("trip_id", "seq", "stop_id", "arrival"),
               [[t.trip_id, k, sid, format_instant(a)]
                for t in trips for k, (sid, a) in enumerate(zip(t.stop_ids, t.arrivals))])
    _write_csv(out / "assignments.csv", ("sensor_id", "trip_id", "start", "end"),
               [[a.sensor_id, a.trip_id, format_instant(a.start), format_instant(a.end)]
                for a in sorted(scenario.assignments, key=lambda a: (a.sensor_id, a.start))])
    _write_csv(out / "tickets.csv", ("instant", "route_id", "stop_id", "trip_id"),
               [[format_instant(t.instant), t.route_id, t.stop_id, t.trip_id] for t in scenario.tickets])
    _write_csv(out / "sightings.csv", ("instant", "mac", "rssi", "sensor_id"),
               [[format_instant(p.instant), p.mac.hex(":"), p.rssi, p.sensor_id] for p in scenario.probes])
    (out / "ground_truth.json").write_text(json.dumps(truth_json(scenario), indent=1, sort_keys=True) + "\n")
    if pcap:
        per_sensor = defaultdict(list)
        for p in scenario.probes:
            per_sensor[p.sensor_id].append((p.instant * 1000, p.rssi, build_probe_request(p.mac)))
        cap = out / "capture"
        cap.mkdir(exist_ok=True)
        for sensor, recs in sorted(per_sensor.items()):
            (cap / f"{sensor}.pcap").write_bytes(write_pcap(recs, LINKTYPE_RADIOTAP))
