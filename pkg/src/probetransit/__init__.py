"""Passive Wi-Fi probe captures to per-stop passenger counts, vehicle load and OD matrices."""

__version__ = "0.1.0"

from .capture import Sighting, anonymize_mac, decode_probe_request, ingest_sightings_csv, parse_pcap_stream
from .load import TripObservation, load_series, od_matrix, tally_entries_exits, window_counts
from .mapping import FilterParams, build_spans, filter_sightings, map_to_stops
from .stats import mean_ci95, metric_bundle, wilcoxon_signed_rank
from .transit import load_schedule, resolve_trip, ticket_counts

__all__ = [
    "FilterParams", "Sighting", "TripObservation", "anonymize_mac", "build_spans", "decode_probe_request",
    "filter_sightings", "ingest_sightings_csv", "load_schedule", "load_series", "map_to_stops",
    "mean_ci95", "metric_bundle", "od_matrix", "parse_pcap_stream", "resolve_trip", "tally_entries_exits",
    "ticket_counts", "wilcoxon_signed_rank", "window_counts",
]
