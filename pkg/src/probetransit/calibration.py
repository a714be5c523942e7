"""Parameter sweep over (min RSSI x single-sighting filter) and its route-level analyses."""

import csv
import io
import math
from collections import Counter, defaultdict
from dataclasses import dataclass

import numpy as np

from .errors import UsageError
from .mapping import FilterParams
from .pipeline import observe
from .stats import METRICS, MetricBundle, mean_ci95, metric_bundle, wilcoxon_signed_rank

CASES = ("A", "B")
DEFAULT_MIN_TRIPS = 30
SKIP_NO_TICKETS = "no ticketing for trip"


@dataclass(frozen=True)
class CalibrationRecord:
    trip_id: str
    route_id: str
    case: str
    params: FilterParams
    metrics: object  # MetricBundle


@dataclass(frozen=True)
class Skip:
    trip_id: str
    route_id: str
    case: str
    params: FilterParams
    reason: str


def case_label(case, include_random):
    return case if include_random else f"{case}_ns"


def evaluate_trip(trip, params, w_indexing="departing"):
    """Case A (b vs i) and case B (w vs c) bundles; case A is a reason string without tickets."""
    obs, _ = observe(trip, params, w_indexing)
    case_a = SKIP_NO_TICKETS if obs.b is None else metric_bundle(obs.b, obs.i)
    case_b = metric_bundle(obs.w, obs.c)
    return case_a, case_b


def sweep(trips, grid, w_indexing="departing"):
    """Evaluate every trip at every grid cell; returns ``(records, skips)`` in (trip, params, case) order."""
    if not grid:
        raise UsageError("calibration grid is empty")
    records, skips = [], []
    for trip in trips:
        for params in grid:
            for case, result in zip(CASES, evaluate_trip(trip, params, w_indexing)):
                if isinstance(result, str):
                    skips.append(Skip(trip.trip_id, trip.route_id, case, params, result))
                else:
                    records.append(CalibrationRecord(trip.trip_id, trip.route_id, case, params, result))
    return records, skips


def by_route(records):
    out = defaultdict(list)
    for r in records:
        out[r.route_id].append(r)
    return dict(sorted(out.items()))


def rssi_win_counts(records, include_random=False):
    """Wins per min RSSI over (trip, case, metric) instances of one route.

    ``include_random`` picks the filter arm; ``None`` pools both arms as separate
    instances. Each instance goes to the RSSI with the lowest error (highest
    r2), ties to the strongest RSSI. Instances with an undefined r2 at any
    candidate RSSI are skipped.
    """
    cells = defaultdict(dict)
    for r in records:
        if include_random is not None and r.params.include_random != include_random:
            continue
        cells[(r.trip_id, r.case, r.params.include_random)][r.params.min_rssi] = r.metrics
    wins = Counter()
    for bundles in cells.values():
        rssis = sorted(bundles, reverse=True)  # strongest first
        for metric in METRICS:
            values = [bundles[x].get(metric) for x in rssis]
            if any(v is None for v in values):
                continue
            if metric == "r2":
                best = max(values)
            else:
                best = min(values)
            wins[rssis[values.index(best)]] += 1
    return wins


def modal_best_rssi(records, include_random=False):
    """``(min_rssi, share)`` of the threshold winning most instances for one route."""
    wins = rssi_win_counts(records, include_random)
    total = sum(wins.values())
    if total == 0:
        raise UsageError("no scorable (trip, case, metric) instances")
    rssi = max(wins, key=lambda x: (wins[x], x))
    return rssi, wins[rssi] / total


def compare_random_filter(records, case, at_rssi=None, min_trips=DEFAULT_MIN_TRIPS, metric="rmse"):
    """Paired signed-rank test of per-trip ``metric`` with vs without single-sighting devices.

    Returns ``(RankTestResult, label, at_rssi)``; the label carries ``_ns`` when
    the exclude arm has the lower mean. ``at_rssi`` defaults to the route's
    modal best threshold on the exclude arm.
    """
    if at_rssi is None:
        at_rssi, _ = modal_best_rssi(records, include_random=False)
    arms = {True: {}, False: {}}
    for r in records:
        if r.case == case and r.params.min_rssi == at_rssi:
            arms[r.params.include_random][r.trip_id] = r.metrics.get(metric)
    paired = sorted(set(arms[True]) & set(arms[False]))
    if len(paired) < min_trips:
        raise UsageError(f"only {len(paired)} paired trips at {at_rssi} dBm, need {min_trips}")
    inc = np.array([arms[True][t] for t in paired], dtype=float)
    exc = np.array([arms[False][t] for t in paired], dtype=float)
    result = wilcoxon_signed_rank(inc, exc)
    label = case_label(case, include_random=not exc.mean() < inc.mean())
    return result, label, at_rssi


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    std: float
    ci_lower: float
    ci_upper: float
    count: int


@dataclass(frozen=True)
class RouteSummary:
    route_id: str
    case: str
    params: FilterParams
    count: int
    metrics: dict  # name -> MetricSummary
    r2_undefined: int

    @property
    def label(self):
        return case_label(self.case, self.params.include_random)


def _summarize(values):
    n = len(values)
    if n == 0:
        return MetricSummary(math.nan, math.nan, math.nan, math.nan, 0)
    if n == 1:
        return MetricSummary(float(values[0]), math.nan, math.nan, math.nan, 1)
    ci = mean_ci95(values)
    return MetricSummary(ci.mean, ci.std, ci.lower, ci.upper, n)


def route_summary(records, min_trips=DEFAULT_MIN_TRIPS, params=None):
    """Per (route, case) mean/std/95% CI of each metric over trips at one params cell."""
    if params is not None:
        records = [r for r in records if r.params == params]
    cells = {r.params for r in records}
    if len(cells) > 1:
        raise UsageError(f"records span {len(cells)} parameter cells; pass params=")
    groups = defaultdict(list)
    for r in records:
        groups[(r.route_id, r.case)].append(r)
    out = []
    for (route, case), recs in sorted(groups.items()):
        if len(recs) < min_trips:
            continue
        stats = {}
        undefined = 0
        for metric in METRICS:
            vals = [r.metrics.get(metric) for r in recs]
            if metric == "r2":
                undefined = sum(v is None for v in vals)
                vals = [v for v in vals if v is not None]
            stats[metric] = _summarize(vals)
        out.append(RouteSummary(route, case, recs[0].params, len(recs), stats, undefined))
    return out


# --------------------------------------------------------------------------
# delimited outputs


def _num(x):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return repr(float(x))


def _csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


RECORD_COLUMNS = ("trip_id", "route_id", "case", "min_rssi", "include_random") + METRICS


def records_csv(records):
    return _csv(RECORD_COLUMNS, [
        [r.trip_id, r.route_id, r.case, r.params.min_rssi, str(r.params.include_random).lower()]
        + [_num(r.metrics.get(m)) for m in METRICS]
        for r in records
    ])


def read_records_csv(text):
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        vals = {m: (float(row[m]) if row[m] != "" else None) for m in METRICS}
        params = FilterParams(int(row["min_rssi"]), row["include_random"] == "true")
        out.append(CalibrationRecord(row["trip_id"], row["route_id"], row["case"], params,
                                     MetricBundle(**vals)))
    return out


def skips_csv(skips):
    return _csv(("trip_id", "route_id", "case", "min_rssi", "include_random", "reason"), [
        [s.trip_id, s.route_id, s.case, s.params.min_rssi, str(s.params.include_random).lower(), s.reason]
        for s in skips
    ])


def modal_table_csv(rows):
    """rows: (route, min_rssi, share)."""
    return _csv(("route", "min_rssi", "share"), [[r, m, _num(s)] for r, m, s in rows])


def wilcoxon_table_csv(rows):
    """rows: (route, label, RankTestResult)."""
    return _csv(("route", "case", "wilcox_pval"), [[r, lab, _num(res.p_value)] for r, lab, res in rows])


def wilcoxon_detail_csv(rows):
    """rows: (route, case, label, at_rssi, RankTestResult)."""
    return _csv(("route", "case", "winner", "at_rssi", "statistic_w", "n_effective", "method", "p_value"), [
        [r, c, lab, at, _num(res.statistic_w), res.n_effective, res.method, _num(res.p_value)]
        for r, c, lab, at, res in rows
    ])


def r2_ci_table_csv(summaries):
    rows = []
    for s in summaries:
        m = s.metrics["r2"]
        rows.append([s.route_id, s.label, _num(m.ci_lower), _num(m.ci_upper), m.count,
                     _num(m.mean), _num(m.std)])
    return _csv(("route", "case", "lower_ci", "upper_ci", "count", "mean", "std"), rows)


def means_table_csv(summaries):
    return _csv(("route", "case", "mae", "rmse", "r2"), [
        [s.route_id, s.label, _num(s.metrics["mae"].mean), _num(s.metrics["rmse"].mean),
         _num(s.metrics["r2"].mean)]
        for s in summaries
    ])


def full_summary_csv(summaries):
    header = ["route", "case", "min_rssi", "include_random", "trips", "r2_undefined"]
    for m in METRICS:
        header += [f"{m}_{k}" for k in ("mean", "std", "ci_lower", "ci_upper", "count")]
    rows = []
    for s in summaries:
        row = [s.route_id, s.label, s.params.min_rssi, str(s.params.include_random).lower(),
               s.count, s.r2_undefined]
        for m in METRICS:
            ms = s.metrics[m]
            row += [_num(ms.mean), _num(ms.std), _num(ms.ci_lower), _num(ms.ci_upper), ms.count]
        rows.append(row)
    return _csv(header, rows)

