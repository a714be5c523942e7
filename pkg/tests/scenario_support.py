"""Helpers shared by the scenario-driven tests."""

from probetransit.mapping import FilterParams
from probetransit.pipeline import observe, prepare_trips
from probetransit.simulator import ScenarioConfig, generate_scenario

SALT = b"scenario-test-salt"
OPEN = FilterParams(-128, True)


def ideal_config(**overrides):
    """Every passenger carries one stable-MAC device probing densely; no noise."""
    values = dict(
        seed=1, n_routes=2, n_trips_per_route=5, n_stops_per_trip=8, segment_seconds=120.0,
        passengers_per_trip=12, probe_interval_seconds=6.0, guarantee_segment_probe=True,
        p_device=1.0, p_random_mac=0.0, n_noise_devices=0,
        onboard_rssi=(-60, -40), noise_rssi=(-95, -85),
    )
    values.update(overrides)
    return ScenarioConfig(**values)


def build(config, with_tickets=True):
    sc = generate_scenario(config)
    trips = prepare_trips(sc.schedule, sc.assignments, sc.sightings(SALT),
                          sc.tickets if with_tickets else None)
    return sc, trips


def observations(trips, params=OPEN, w_indexing="departing"):
    return {t.trip_id: observe(t, params, w_indexing)[0] for t in trips}
