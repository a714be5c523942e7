"""Per-stop entries, exits, load and segment device counts; OD matrices."""

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import IntegrityError
from .mapping import DEFAULT_BOUNDARY_MARGIN_SECONDS, margin_ms

W_INDEXINGS = ("departing", "arriving")


@dataclass
class TripObservation:
    trip_id: str
    route_id: str
    stops: list
    b: np.ndarray | None
    i: np.ndarray
    o: np.ndarray
    c: np.ndarray
    w: np.ndarray

    def check(self):
        """Raise IntegrityError if any conservation invariant fails."""
        n = len(self.stops)
        vectors = {"i": self.i, "o": self.o, "c": self.c, "w": self.w}
        if self.b is not None:
            vectors["b"] = self.b
        for name, v in vectors.items():
            if len(v) != n:
                raise IntegrityError(f"{self.trip_id}: {name} has length {len(v)}, expected {n}")
            if (v < 0).any():
                raise IntegrityError(f"{self.trip_id}: negative entry in {name}")
        if self.i.sum() != self.o.sum():
            raise IntegrityError(f"{self.trip_id}: entries {self.i.sum()} != exits {self.o.sum()}")
        if not np.array_equal(self.c, load_series(self.i, self.o)):
            raise IntegrityError(f"{self.trip_id}: c does not follow the load recurrence")
        if self.c[-1] != 0:
            raise IntegrityError(f"{self.trip_id}: final load {self.c[-1]} != 0")

    def to_json(self):
        def ints(v):
            return None if v is None else [int(x) for x in v]

        return {
            "trip_id": self.trip_id,
            "route_id": self.route_id,
            "stops": list(self.stops),
            "b": ints(self.b),
            "i": ints(self.i),
            "o": ints(self.o),
            "c": ints(self.c),
            "w": ints(self.w),
        }

    @classmethod
    def from_json(cls, d):
        def arr(v):
            return None if v is None else np.asarray(v, dtype=np.int64)

        return cls(d["trip_id"], d.get("route_id", ""), list(d["stops"]), arr(d.get("b")),
                   arr(d["i"]), arr(d["o"]), arr(d["c"]), arr(d["w"]))


def tally_entries_exits(mappings, n_stops):
    i = np.zeros(n_stops, dtype=np.int64)
    o = np.zeros(n_stops, dtype=np.int64)
    for m in mappings:
        i[m.entry_stop_index] += 1
        o[m.exit_stop_index] += 1
    return i, o


def tally_indices(entry, exit_, n_stops):
    i = np.bincount(entry, minlength=n_stops).astype(np.int64)
    o = np.bincount(exit_, minlength=n_stops).astype(np.int64)
    return i, o


def load_series(i, o):
    """Onboard count after each stop: c[0] = i[0] - o[0], c[t] = c[t-1] + i[t] - o[t]."""
    i = np.asarray(i, dtype=np.int64)
    o = np.asarray(o, dtype=np.int64)
    if i.shape != o.shape:
        raise IntegrityError(f"entry/exit vectors differ in length: {len(i)} vs {len(o)}")
    c = np.cumsum(i - o)
    if len(c) and c.min() < 0:
        t = int(np.argmax(c < 0))
        raise IntegrityError(f"negative load {int(c[t])} at stop index {t}")
    return c


def _segment_of(instant, arrivals, indexing, margin):
    """Segment index an instant counts toward, or None when outside all segments."""
    n = len(arrivals)
    if indexing == "departing":
        if instant < arrivals[0] or instant > arrivals[-1] + margin:
            return None
        t = 0
        while t + 1 < n and arrivals[t + 1] <= instant:
            t += 1
        return t
    if instant < arrivals[0] - margin or instant > arrivals[-1]:
        return None
    t = 0
    while arrivals[t] < instant:
        t += 1
    return t


def window_counts(sightings, timeline, indexing="departing",
                  boundary_margin=DEFAULT_BOUNDARY_MARGIN_SECONDS):
    """Distinct devices per stop segment.

    ``departing``: w[t] counts devices seen in ``[a[t], a[t+1])``, the last stop's
    segment being ``[a[-1], a[-1] + margin]``, so w[t] lines up with the load
    carried away from stop t. ``arriving``: w[t] counts ``(a[t-1], a[t]]``, the
    first stop's segment being ``[a[0] - margin, a[0]]``.
    """
    if indexing not in W_INDEXINGS:
        raise ValueError(f"unknown w indexing {indexing!r}")
    arrivals = timeline.arrivals
    m = margin_ms(boundary_margin)
    seen = [set() for _ in arrivals]
    for s in sightings:
        t = _segment_of(s.instant, arrivals, indexing, m)
        if t is not None:
            seen[t].add(s.device_id)
    return np.array([len(x) for x in seen], dtype=np.int64)


def window_counts_arrays(dev, times, arrivals, indexing="departing", margin=0):
    """Vectorized :func:`window_counts` over device codes and epoch-ms times."""
    n = len(arrivals)
    if indexing == "departing":
        seg = np.searchsorted(arrivals, times, side="right") - 1
        ok = (seg >= 0) & (times <= arrivals[-1] + margin)
    elif indexing == "arriving":
        seg = np.searchsorted(arrivals, times, side="left")
        ok = (seg < n) & (times >= arrivals[0] - margin)
    else:
        raise ValueError(f"unknown w indexing {indexing!r}")
    seg, dev = seg[ok], dev[ok]
    if len(seg) == 0:
        return np.zeros(n, dtype=np.int64)
    pairs = np.unique(dev * n + seg)
    return np.bincount(pairs % n, minlength=n).astype(np.int64)


@dataclass
class ODMatrix:
    scope: str
    stop_ids: list
    counts: np.ndarray = field(repr=False)

    @property
    def total(self):
        return int(self.counts.sum())

    def row_sums(self):
        return self.counts.sum(axis=1)

    def col_sums(self):
        return self.counts.sum(axis=0)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["stop"] + list(self.stop_ids))
        for sid, row in zip(self.stop_ids, self.counts):
            w.writerow([sid] + [int(x) for x in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text, scope=""):
        rows = list(csv.reader(io.StringIO(text)))
        stop_ids = rows[0][1:]
        counts = np.array([[int(x) for x in r[1:]] for r in rows[1:]], dtype=np.int64)
        return cls(scope, stop_ids, counts.reshape(len(stop_ids), len(stop_ids)))


def od_matrix(scope, stop_ids, mappings):
    """Count (entry, exit) pairs of ``StopMapping`` objects over one stop sequence."""
    n = len(stop_ids)
    counts = np.zeros((n, n), dtype=np.int64)
    for m in mappings:
        counts[m.entry_stop_index, m.exit_stop_index] += 1
    return ODMatrix(scope, list(stop_ids), counts)


def od_from_indices(scope, stop_ids, entry, exit_):
    n = len(stop_ids)
    flat = np.bincount(np.asarray(entry) * n + np.asarray(exit_), minlength=n * n)
    return ODMatrix(scope, list(stop_ids), flat.reshape(n, n).astype(np.int64))


def aggregate_od(scope, matrices):
    """Sum matrices over the union of their stop ids, ordered by first appearance.

    Stops repeated within one sequence merge into a single row/column.
    """
    order = {}
    for mat in matrices:
        for sid in mat.stop_ids:
            order.setdefault(sid, len(order))
    n = len(order)
    counts = np.zeros((n, n), dtype=np.int64)
    for mat in matrices:
        idx = np.array([order[s] for s in mat.stop_ids], dtype=np.int64)
        np.add.at(counts, (idx[:, None], idx[None, :]), mat.counts)
    return ODMatrix(scope, list(order), counts)
