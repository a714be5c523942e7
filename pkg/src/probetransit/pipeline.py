"""Glue between ingestion, trip resolution and per-trip estimation."""

import logging
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .load import TripObservation, load_series, od_from_indices, tally_indices, window_counts_arrays
from .mapping import DEFAULT_BOUNDARY_MARGIN_SECONDS, TripFrame, margin_ms
from .transit import DEFAULT_TICKET_GRACE_SECONDS, assign_validations, ticket_counts

log = logging.getLogger(__name__)


@dataclass
class TripData:
    """Everything needed to score one trip: its timeline, sightings and ticket vector."""

    frame: TripFrame
    b: np.ndarray | None

    @property
    def timeline(self):
        return self.frame.timeline

    @property
    def trip_id(self):
        return self.frame.timeline.trip_id

    @property
    def route_id(self):
        return self.frame.timeline.route_id


def group_sightings_by_trip(sightings, assignments):
    """Resolve every sighting to a trip through its sensor's assignment spans."""
    grouped = defaultdict(list)
    unresolved = 0
    for s in sightings:
        trip = assignments.resolve(s.sensor_id, s.instant)
        if trip is None:
            unresolved += 1
        else:
            grouped[trip].append(s)
    if unresolved:
        log.info("%d sighting(s) fell outside every assignment span", unresolved)
    return grouped


def prepare_trips(schedule, assignments, sightings, validations=None, trip_ids=None,
                  boundary_margin=DEFAULT_BOUNDARY_MARGIN_SECONDS,
                  ticket_grace_seconds=DEFAULT_TICKET_GRACE_SECONDS):
    """Build :class:`TripData` for each trip (all scheduled trips by default), sorted by trip_id.

    ``validations=None`` means no ticketing is available (b stays None).
    """
    by_trip = group_sightings_by_trip(sightings, assignments)
    tickets = None
    if validations is not None:
        tickets = assign_validations(schedule, validations, ticket_grace_seconds)
    ids = sorted(schedule.trips if trip_ids is None else trip_ids)
    out = []
    for tid in ids:
        timeline = schedule.trip(tid)
        frame = TripFrame(timeline, by_trip.get(tid, ()), boundary_margin)
        b = None
        if tickets is not None:
            b = ticket_counts(timeline, tickets.get(tid, ()), ticket_grace_seconds)
        out.append(TripData(frame, b))
    return out


def observe(trip, params, w_indexing="departing"):
    """Run filter -> spans -> stop mapping -> vectors for one trip.

    Returns ``(TripObservation, (entry, exit))`` where the index arrays hold the
    mapped devices' stop indices.
    """
    frame = trip.frame
    n = frame.timeline.n_stops
    mask, _codes, entry, exit_ = frame.mappings(params)
    i, o = tally_indices(entry, exit_, n)
    c = load_series(i, o)
    w = window_counts_arrays(frame.dev[mask], frame.times[mask], frame.arrivals, w_indexing,
                             margin_ms(frame.boundary_margin))
    obs = TripObservation(frame.timeline.trip_id, frame.timeline.route_id,
                          list(frame.timeline.stop_ids), trip.b, i, o, c, w)
    return obs, (entry, exit_)


def trip_od(trip, indices):
    entry, exit_ = indices
    return od_from_indices(trip.trip_id, trip.timeline.stop_ids, entry, exit_)
