import numpy as np
import pytest

from tidalflow.data import (
    ArchetypeSpec,
    ODPairIndex,
    SyntheticSpec,
    TripRecord,
    TripDatabase,
    build_od_flow_matrix,
    generate_synthetic_trips,
)


@pytest.fixture
def small_db():
    records = (
        TripRecord("c1", "A", "B", 8),
        TripRecord("c2", "A", "B", 8),
        TripRecord("c1", "B", "A", 17),
    )
    return TripDatabase.from_records(records)


@pytest.fixture
def four_station_index():
    return ODPairIndex.from_stations(["A", "B", "C", "D"])


def tidal_spec(station_count=6, users_per_archetype=150, seed=11,
               pair_counts=(4, 5), noise_rate=0.0, peak_jitter=0.0):
    """Two clean commuter archetypes with opposite home/work areas."""
    half = station_count // 2
    left = tuple(1.0 / half if i < half else 0.0 for i in range(station_count))
    right = tuple(0.0 if i < half else 1.0 / (station_count - half)
                  for i in range(station_count))
    probs = tuple(1.0 / len(pair_counts) for _ in pair_counts)
    return SyntheticSpec(
        station_count=station_count,
        users_per_archetype=users_per_archetype,
        seed=seed,
        archetypes=(
            ArchetypeSpec(label="early", home_dist=left, work_dist=right,
                          morning_peak=7, evening_peak=16,
                          pair_counts=pair_counts, pair_count_probs=probs,
                          noise_rate=noise_rate, peak_jitter=peak_jitter),
            ArchetypeSpec(label="late", home_dist=right, work_dist=left,
                          morning_peak=9, evening_peak=18,
                          pair_counts=pair_counts, pair_count_probs=probs,
                          noise_rate=noise_rate, peak_jitter=peak_jitter),
        ),
    )


@pytest.fixture
def planted():
    """Deterministic planted corpus: (db, ground_truth, index, V)."""
    db, truth = generate_synthetic_trips(tidal_spec())
    index = ODPairIndex.from_stations(db.stations)
    v = build_od_flow_matrix(db, index)
    return db, truth, index, v


def random_model(rng, n_rows, k, t):
    w = rng.uniform(0.1, 2.0, (n_rows, k))
    h = rng.uniform(0.1, 2.0, (k, t))
    return w, h
