"""``probe`` command line: parse, estimate, calibrate, simulate, report.

Exit codes: 0 success, 1 I/O or input-data error, 2 empty result, 64 usage.
"""

import argparse
import csv
import json
import logging
import os
import sys
from collections import Counter
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from . import calibration as cal
from . import plots
from .capture import ingest_sightings_csv, sightings_from_pcap, write_sightings_csv
from .errors import (ConfigError, FormatError, IntegrityError, PcapError, PcapTruncatedError,
                     ScheduleError, UsageError)
from .load import W_INDEXINGS, ODMatrix, TripObservation, aggregate_od
from .mapping import CANONICAL_RSSI, DEFAULT_BOUNDARY_MARGIN_SECONDS, FilterParams
from .pipeline import observe, prepare_trips, trip_od
from .simulator import config_from_mapping, generate_scenario, load_scenario_config, read_config_text
from .timeutil import date_of, parse_date
from .transit import DEFAULT_TICKET_GRACE_SECONDS, load_assignments, load_schedule_dir, load_tickets

log = logging.getLogger("probetransit")

EXIT_OK, EXIT_IO, EXIT_EMPTY, EXIT_USAGE = 0, 1, 2, 64
DEFAULT_SALT_ENV = "PROBE_SALT"


class EmptyResult(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _common_flags():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("common options")
    g.add_argument("--config", type=Path, help="key = value file supplying defaults for these flags")
    g.add_argument("--salt-env", default=DEFAULT_SALT_ENV,
                   help="environment variable holding the MAC hashing salt (default %(default)s)")
    g.add_argument("--min-rssi", type=int, default=-55, help="minimum RSSI in dBm, inclusive (default %(default)s)")
    g.add_argument("--allow-noncanonical-rssi", action="store_true",
                   help="accept --min-rssi values outside the canonical candidate set")
    g.add_argument("--include-random", action="store_true",
                   help="keep devices seen only once per trip (dropped by default)")
    g.add_argument("--w-indexing", choices=W_INDEXINGS, default="departing")
    g.add_argument("--min-trips", type=int, default=cal.DEFAULT_MIN_TRIPS)
    g.add_argument("--boundary-margin-seconds", type=float, default=DEFAULT_BOUNDARY_MARGIN_SECONDS)
    g.add_argument("--ticket-grace-seconds", type=float, default=DEFAULT_TICKET_GRACE_SECONDS)
    g.add_argument("--no-timestamps", action="store_true", help="omit generation times from outputs")
    return p


def _input_flags():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("inputs")
    g.add_argument("--schedule", type=Path, required=True,
                   help="directory with stops.csv, trips.csv, stop_times.csv")
    g.add_argument("--sightings", type=Path, help="sightings CSV (default <schedule>/sightings.csv)")
    g.add_argument("--pcap", type=Path, action="append", default=[],
                   help="pcap capture(s); the sensor id is the file stem unless --sensor-id is given")
    g.add_argument("--sensor-id", help="sensor id for a single --pcap")
    g.add_argument("--assignments", type=Path, help="default <schedule>/assignments.csv")
    g.add_argument("--tickets", type=Path, help="default <schedule>/tickets.csv when present")
    g.add_argument("--no-tickets", action="store_true", help="ignore ticketing even if present")
    return p


def build_parser():
    parser = _Parser(prog="probe", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    parser.commands = sub.choices
    common, inputs = _common_flags(), _input_flags()

    p = sub.add_parser("parse", parents=[common], help="decode a pcap into an anonymized sightings CSV")
    p.add_argument("--pcap", type=Path, required=True)
    p.add_argument("--sensor-id", help="vehicle/sensor id (default: pcap file stem)")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("estimate", parents=[common, inputs],
                       help="per-trip entries/exits/load and route OD matrices")
    p.add_argument("--from", dest="date_from", required=True, help="first service date, YYYY-MM-DD")
    p.add_argument("--to", dest="date_to", required=True, help="last service date, YYYY-MM-DD")
    p.add_argument("--plot-trip", action="append", default=[], help="trip id to plot (repeatable)")
    p.add_argument("--plot-all", action="store_true")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("calibrate", parents=[common, inputs],
                       help="RSSI x random-filter sweep with rank tests and route summaries")
    p.add_argument("--rssi-grid", type=_int_list, default=list(CANONICAL_RSSI))
    p.add_argument("--random-arms", choices=("both", "include", "exclude"), default="both")
    p.add_argument("--modal-arm", choices=("exclude", "include", "both"), default="exclude",
                   help="filter arm(s) pooled when picking the modal best RSSI")
    p.add_argument("--at-rssi", type=int, help="RSSI for the random-filter rank test (default: modal best)")
    p.add_argument("--from", dest="date_from", help="first service date, YYYY-MM-DD")
    p.add_argument("--to", dest="date_to", help="last service date, YYYY-MM-DD")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("simulate", help="generate a synthetic ground-truthed scenario")
    p.add_argument("--config", type=Path, help="scenario key = value file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--pcap", action="store_true", help="also write per-sensor radiotap pcaps")
    p.add_argument("--no-timestamps", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="render figures and load summaries from estimate/calibrate outputs")
    p.add_argument("--estimate", type=Path, help="output directory of `probe estimate`")
    p.add_argument("--calibration", type=Path, help="output directory of `probe calibrate`")
    p.add_argument("--trip", action="append", default=[], help="trip id to plot (repeatable)")
    p.add_argument("--all-trips", action="store_true")
    p.add_argument("--capacity", type=int, default=plots.CAPACITY)
    p.add_argument("--no-timestamps", action="store_true")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_report)
    return parser


def _apply_config(parser, argv):
    """Parse ``argv``, taking flag defaults from a ``--config`` file for pipeline commands."""
    argv = sys.argv[1:] if argv is None else list(argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", type=Path)
    known, _ = pre.parse_known_args(argv)
    command = next((a for a in argv if a in parser.commands), None)
    if known.config is None or command in (None, "simulate"):
        return parser.parse_args(argv)
    sub = parser.commands[command]
    dests = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in read_config_text(known.config.read_text()).items():
        dest = key.replace("-", "_")
        if dest not in dests or dest in ("config", "help"):
            raise ConfigError(f"{key}: unknown option in {known.config}")
        action = dests[dest]
        if isinstance(action, argparse._StoreTrueAction):
            defaults[dest] = raw.strip().lower() in ("1", "true", "yes")
        elif action.type is not None:
            try:
                defaults[dest] = action.type(raw.strip())
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise ConfigError(f"{key}: {exc}") from None
        else:
            defaults[dest] = raw.strip()
    sub.set_defaults(**defaults)
    for action in sub._actions:
        if action.dest in defaults:
            action.required = False
    return parser.parse_args(argv)


# --------------------------------------------------------------------------
# helpers


def _salt(args, required):
    value = os.environ.get(args.salt_env, "")
    if required and not value:
        raise ConfigError(f"salt environment variable {args.salt_env} is unset or empty")
    return value.encode() if value else None


def _filter_params(args):
    params = FilterParams(args.min_rssi, args.include_random)
    if not params.is_canonical and not args.allow_noncanonical_rssi:
        raise UsageError(f"--min-rssi {args.min_rssi} is not one of {list(CANONICAL_RSSI)}; "
                         "pass --allow-noncanonical-rssi to use it")
    if not params.is_canonical:
        log.warning("using non-canonical min RSSI %d", args.min_rssi)
    return params


def _need(path, what):
    if not path.exists():
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


def _load_inputs(args):
    schedule = load_schedule_dir(args.schedule)
    assignments = load_assignments(_need(args.assignments or args.schedule / "assignments.csv",
                                         "assignments"), schedule)
    salt = _salt(args, required=bool(args.pcap))
    if args.pcap:
        if args.sensor_id and len(args.pcap) > 1:
            raise UsageError("--sensor-id applies to a single --pcap")
        sightings = []
        for path in args.pcap:
            stats = Counter()
            sightings += sightings_from_pcap(_need(path, "pcap").read_bytes(), salt,
                                             args.sensor_id or path.stem, stats)
            log.info("%s: %s", path, dict(stats))
        sightings.sort(key=lambda s: (s.sensor_id, s.instant))
    else:
        path = _need(args.sightings or args.schedule / "sightings.csv", "sightings")
        with open(path, newline="") as fh:
            sightings, _rejects = ingest_sightings_csv(fh, salt)
    validations = None
    if not args.no_tickets:
        tpath = args.tickets or args.schedule / "tickets.csv"
        if args.tickets is not None or tpath.exists():
            validations = load_tickets(_need(tpath, "tickets"), schedule)
    return schedule, assignments, sightings, validations


def _trip_ids_in_range(schedule, date_from, date_to):
    lo = parse_date(date_from) if date_from else None
    hi = parse_date(date_to) if date_to else None
    if lo and hi and lo > hi:
        raise UsageError(f"--from {lo} is after --to {hi}")
    return sorted(t.trip_id for t in schedule.trips.values()
                  if (lo is None or date_of(t.start) >= lo) and (hi is None or date_of(t.start) <= hi))


def _write(path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _manifest(out, command, params, no_timestamps):
    files = sorted(str(p.relative_to(out)) for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    doc = {"command": command, "version": __version__, "parameters": params, "files": files}
    if not no_timestamps:
        doc["generated_at"] = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    _write(out / "manifest.json", json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _safe(name):
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in name)


# --------------------------------------------------------------------------
# commands


def cmd_parse(args):
    salt = _salt(args, required=True)
    data = _need(args.pcap, "pcap").read_bytes()
    stats = Counter()
    status = EXIT_OK
    try:
        sightings = sightings_from_pcap(data, salt, args.sensor_id or args.pcap.stem, stats)
    except PcapTruncatedError as exc:
        log.error("%s: %s; keeping %d complete frame(s)", args.pcap, exc, len(exc.partial))
        sightings, status = exc.partial, EXIT_IO
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        write_sightings_csv(sightings, fh)
    print(f"{len(sightings)} probe request(s) -> {args.out}; "
          + ", ".join(f"{k}={v}" for k, v in sorted(stats.items())), file=sys.stderr)
    return status


def cmd_estimate(args):
    params = _filter_params(args)
    schedule, assignments, sightings, validations = _load_inputs(args)
    trip_ids = _trip_ids_in_range(schedule, args.date_from, args.date_to)
    if not trip_ids:
        raise EmptyResult(f"no scheduled trips between {args.date_from} and {args.date_to}")
    trips = prepare_trips(schedule, assignments, sightings, validations, trip_ids,
                          args.boundary_margin_seconds, args.ticket_grace_seconds)
    out = args.out
    plot_ids = set(args.plot_trip)
    unknown = plot_ids - set(trip_ids)
    if unknown:
        log.warning("requested plot for trip(s) not in range: %s", ", ".join(sorted(unknown)))

    per_scope = {}
    per_stop_rows = ["trip_id,route_id,stop_index,stop_id,b,i,o,c,w\n"]
    for trip in trips:
        obs, idx = observe(trip, params, args.w_indexing)
        obs.check()
        _write(out / "observations" / f"{_safe(trip.trip_id)}.json",
               json.dumps(obs.to_json(), indent=1, sort_keys=True) + "\n")
        for k, sid in enumerate(obs.stops):
            b = "" if obs.b is None else int(obs.b[k])
            per_stop_rows.append(f"{obs.trip_id},{obs.route_id},{k},{sid},{b},"
                                 f"{obs.i[k]},{obs.o[k]},{obs.c[k]},{obs.w[k]}\n")
        scope = f"{trip.route_id}_{trip.timeline.direction}"
        per_scope.setdefault(scope, []).append(trip_od(trip, idx))
        if args.plot_all or trip.trip_id in plot_ids:
            path = out / "plots" / f"entries_{_safe(trip.trip_id)}.svg"
            path.parent.mkdir(parents=True, exist_ok=True)
            plots.entries_figure(obs, path, timestamps=not args.no_timestamps)
    _write(out / "per_stop.csv", "".join(per_stop_rows))
    for scope, mats in sorted(per_scope.items()):
        od = aggregate_od(scope, mats)
        _write(out / "od" / f"{_safe(scope)}.csv", od.to_csv())
    _manifest(out, "estimate", {
        "min_rssi": params.min_rssi, "include_random": params.include_random,
        "w_indexing": args.w_indexing, "boundary_margin_seconds": args.boundary_margin_seconds,
        "from": args.date_from, "to": args.date_to, "trips": len(trips),
        "ticketing": validations is not None,
    }, args.no_timestamps)
    print(f"estimated {len(trips)} trip(s) -> {out}", file=sys.stderr)
    return EXIT_OK


def _grid(args):
    arms = {"both": (True, False), "include": (True,), "exclude": (False,)}[args.random_arms]
    if not args.rssi_grid:
        raise UsageError("calibration grid is empty (--rssi-grid)")
    for r in args.rssi_grid:
        FilterParams(r, True)  # range check
        if r not in CANONICAL_RSSI and not args.allow_noncanonical_rssi:
            raise UsageError(f"grid RSSI {r} is not canonical; pass --allow-noncanonical-rssi")
    return [FilterParams(r, inc) for r in args.rssi_grid for inc in arms]


def cmd_calibrate(args):
    grid = _grid(args)
    summary_params = _filter_params(args)
    schedule, assignments, sightings, validations = _load_inputs(args)
    if validations is None:
        log.warning("no ticketing available: case A is skipped, case B only")
    trip_ids = _trip_ids_in_range(schedule, args.date_from, args.date_to)
    if not trip_ids:
        raise EmptyResult("no scheduled trips in range")
    trips = prepare_trips(schedule, assignments, sightings, validations, trip_ids,
                          args.boundary_margin_seconds, args.ticket_grace_seconds)
    records, skips = cal.sweep(trips, grid, args.w_indexing)
    if summary_params in grid:
        summary_records = [r for r in records if r.params == summary_params]
    else:
        summary_records, _ = cal.sweep(trips, [summary_params], args.w_indexing)

    modal_arm = {"exclude": False, "include": True, "both": None}[args.modal_arm]
    table1, rank_rows = [], {c: [] for c in cal.CASES}
    detail = []
    for route, recs in cal.by_route(records).items():
        try:
            rssi, share = cal.modal_best_rssi(recs, modal_arm)
            table1.append((route, rssi, share))
        except UsageError as exc:
            log.warning("route %s: modal RSSI unavailable: %s", route, exc)
            rssi = None
        at = args.at_rssi if args.at_rssi is not None else rssi
        if at is None:
            continue
        for case in cal.CASES:
            try:
                result, label, at = cal.compare_random_filter(recs, case, at, args.min_trips)
            except UsageError as exc:
                log.info("route %s case %s: rank test skipped: %s", route, case, exc)
                continue
            rank_rows[case].append((route, label, result))
            detail.append((route, case, label, at, result))
    summaries = cal.route_summary(summary_records, args.min_trips)
    if not summaries:
        log.warning("no route reaches --min-trips %d; summary tables are empty", args.min_trips)

    out = args.out
    _write(out / "records.csv", cal.records_csv(records))
    _write(out / "skips.csv", cal.skips_csv(skips))
    _write(out / "table1_modal_rssi.csv", cal.modal_table_csv(table1))
    _write(out / "table2_wilcoxon_A.csv", cal.wilcoxon_table_csv(rank_rows["A"]))
    _write(out / "table3_wilcoxon_B.csv", cal.wilcoxon_table_csv(rank_rows["B"]))
    _write(out / "wilcoxon_detail.csv", cal.wilcoxon_detail_csv(detail))
    _write(out / "table4_r2_ci.csv", cal.r2_ci_table_csv(summaries))
    _write(out / "table5_means.csv", cal.means_table_csv(summaries))
    _write(out / "route_summary.csv", cal.full_summary_csv(summaries))
    _manifest(out, "calibrate", {
        "rssi_grid": list(args.rssi_grid), "random_arms": args.random_arms, "modal_arm": args.modal_arm,
        "at_rssi": args.at_rssi, "summary_min_rssi": summary_params.min_rssi,
        "summary_include_random": summary_params.include_random, "min_trips": args.min_trips,
        "w_indexing": args.w_indexing, "trips": len(trips), "records": len(records),
        "skips": len(skips), "ticketing": validations is not None,
    }, args.no_timestamps)
    print(f"calibrated {len(trips)} trip(s), {len(records)} record(s) -> {out}", file=sys.stderr)
    return EXIT_OK


def cmd_simulate(args):
    overrides = {"seed": args.seed} if args.seed is not None else {}
    if args.config is not None:
        cfg = load_scenario_config(_need(args.config, "config"), **overrides)
    else:
        cfg = config_from_mapping({}, **overrides)
    scenario = generate_scenario(cfg)
    scenario.write(args.out, pcap=args.pcap)
    _manifest(args.out, "simulate", {"seed": cfg.seed}, args.no_timestamps)
    print(f"simulated {len(scenario.schedule)} trip(s), {len(scenario.probes)} probe(s) -> {args.out}",
          file=sys.stderr)
    return EXIT_OK


def _read_table(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _flt(x):
    return float(x) if x not in ("", None) else float("nan")


def cmd_report(args):
    if args.estimate is None and args.calibration is None:
        raise UsageError("report needs --estimate and/or --calibration")
    out = args.out
    fig_dir = out / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    ts = not args.no_timestamps
    produced = 0

    if args.estimate is not None:
        obs_dir = _need(args.estimate / "observations", "observations directory")
        observations = [TripObservation.from_json(json.loads(p.read_text()))
                        for p in sorted(obs_dir.glob("*.json"))]
        wanted = set(args.trip)
        rows = ["trip_id,route_id,peak_load,peak_stop,capacity,over_capacity\n"]
        for obs in observations:
            k = int(obs.c.argmax()) if len(obs.c) else 0
            peak = int(obs.c[k]) if len(obs.c) else 0
            rows.append(f"{obs.trip_id},{obs.route_id},{peak},{obs.stops[k]},{args.capacity},"
                        f"{str(peak > args.capacity).lower()}\n")
            if args.all_trips or obs.trip_id in wanted:
                plots.entries_figure(obs, fig_dir / f"entries_{_safe(obs.trip_id)}.svg", ts)
                plots.load_figure(obs, fig_dir / f"load_{_safe(obs.trip_id)}.svg", args.capacity, ts)
                produced += 2
        _write(out / "load_summary.csv", "".join(rows))
        for path in sorted((args.estimate / "od").glob("*.csv")):
            od = ODMatrix.from_csv(path.read_text(), scope=path.stem)
            plots.od_figure(od, fig_dir / f"od_{path.stem}.svg", ts)
            produced += 1

    if args.calibration is not None:
        t1 = _read_table(_need(args.calibration / "table1_modal_rssi.csv", "table 1"))
        if t1:
            plots.modal_rssi_figure([(r["route"], int(r["min_rssi"]), _flt(r["share"])) for r in t1],
                                    fig_dir / "modal_rssi.svg", ts)
            produced += 1
        t4 = _read_table(_need(args.calibration / "table4_r2_ci.csv", "table 4"))
        if t4:
            plots.r2_ci_figure([(r["route"], r["case"], _flt(r["lower_ci"]), _flt(r["upper_ci"]),
                                 _flt(r["mean"])) for r in t4], fig_dir / "r2_ci.svg", ts)
            produced += 1

    _manifest(out, "report", {"capacity": args.capacity}, args.no_timestamps)
    print(f"rendered {produced} figure(s) -> {fig_dir}", file=sys.stderr)
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except (ConfigError, OSError) as exc:
        print(f"probe: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # argparse: usage errors, --help, --version
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except EmptyResult as exc:
        print(f"probe: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except (ConfigError, UsageError) as exc:
        print(f"probe: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, PcapError, ScheduleError, FormatError, IntegrityError) as exc:
        print(f"probe: error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
