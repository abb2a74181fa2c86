"""Trip records, temporal flow matrices, and synthetic corpus generation.

A trip database is a flat list of ``(user, origin, destination, epoch)``
records over a fixed station registry and a fixed number of time epochs
(24 hourly bins by default).  Two count matrices are derived from it:

* the OD-pair flow matrix: one row per directed station pair, one column
  per epoch, excluding same-station trips;
* the user flow matrix: one row per user, one column per epoch, stations
  ignored.

OD-pair rows use a block layout: the P forward pairs (origin sorted before
destination) occupy rows ``0..P-1`` and each reverse pair sits at row
``r + P``, so direction-based slices of the weight matrix are contiguous.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

DEFAULT_EPOCH_COUNT = 24

OD_PAIR_ROWS = "od_pair"
USER_ROWS = "user"


class TripParseError(ValueError):
    """Malformed row in a trip CSV; carries the 1-based line number."""

    def __init__(self, message, line_number):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


@dataclass(frozen=True)
class TripRecord:
    """A single trip: who travelled, between which stations, at which epoch."""

    user_id: str
    origin: str
    destination: str
    epoch: int


@dataclass(frozen=True)
class TripDatabase:
    """An ordered trip collection plus its station registry and epoch count."""

    records: tuple[TripRecord, ...]
    stations: tuple[str, ...]
    epoch_count: int

    def __post_init__(self):
        if self.epoch_count < 1:
            raise ValueError("epoch_count must be >= 1")
        registry = set(self.stations)
        for rec in self.records:
            if rec.origin not in registry or rec.destination not in registry:
                raise ValueError(
                    f"record references unknown station: {rec.origin}>{rec.destination}"
                )
            if not 0 <= rec.epoch < self.epoch_count:
                raise ValueError(f"epoch {rec.epoch} outside [0, {self.epoch_count})")

    @classmethod
    def from_records(cls, records, epoch_count=DEFAULT_EPOCH_COUNT, stations=None):
        """Build a database; the registry defaults to the sorted union of
        stations observed in the records."""
        records = tuple(records)
        if stations is None:
            seen = {r.origin for r in records} | {r.destination for r in records}
            stations = tuple(sorted(seen))
        else:
            stations = tuple(stations)
        return cls(records=records, stations=stations, epoch_count=epoch_count)

    def users_in_first_seen_order(self):
        seen = {}
        for rec in self.records:
            if rec.user_id not in seen:
                seen[rec.user_id] = None
        return list(seen)

    def trip_counts_by_user(self):
        counts = {}
        for rec in self.records:
            counts[rec.user_id] = counts.get(rec.user_id, 0) + 1
        return counts


@dataclass(frozen=True)
class ODPairIndex:
    """Row layout for directed station pairs.

    ``forward_pairs`` holds the P pairs whose origin sorts before their
    destination; row ``r < P`` is ``forward_pairs[r]`` and row ``r + P`` is
    the swapped pair, so ``reverse_of`` is an involution.
    """

    stations: tuple[str, ...]
    forward_pairs: tuple[tuple[str, str], ...]
    _row_of: dict = field(repr=False, hash=False, compare=False, default_factory=dict)

    @classmethod
    def from_stations(cls, stations):
        stations = tuple(sorted(set(stations)))
        pairs = []
        for i, origin in enumerate(stations):
            for dest in stations[i + 1:]:
                pairs.append((origin, dest))
        index = cls(stations=stations, forward_pairs=tuple(pairs))
        for r, (o, d) in enumerate(index.forward_pairs):
            index._row_of[(o, d)] = r
            index._row_of[(d, o)] = r + len(index.forward_pairs)
        return index

    @property
    def n_pairs(self):
        """P: the number of unordered station pairs."""
        return len(self.forward_pairs)

    @property
    def total_rows(self):
        return 2 * len(self.forward_pairs)

    def pair(self, row):
        p = self.n_pairs
        if row < p:
            return self.forward_pairs[row]
        origin, dest = self.forward_pairs[row - p]
        return (dest, origin)

    def reverse_of(self, row):
        p = self.n_pairs
        return row + p if row < p else row - p

    def row_of(self, origin, destination):
        """Row for a directed pair; None when origin == destination."""
        return self._row_of.get((origin, destination))

    def row_labels(self):
        return tuple(f"{o}>{d}" for o, d in (self.pair(r) for r in range(self.total_rows)))

    def origin_indices(self):
        """Station index of each row's origin, as an int array of length 2P."""
        pos = {s: i for i, s in enumerate(self.stations)}
        return np.array([pos[self.pair(r)[0]] for r in range(self.total_rows)], dtype=np.int64)

    def destination_indices(self):
        pos = {s: i for i, s in enumerate(self.stations)}
        return np.array([pos[self.pair(r)[1]] for r in range(self.total_rows)], dtype=np.int64)


@dataclass(frozen=True)
class FlowMatrix:
    """Nonnegative trip-count matrix: rows are OD pairs or users, columns epochs."""

    values: np.ndarray
    row_kind: str
    row_labels: tuple[str, ...]

    def __post_init__(self):
        if self.row_kind not in (OD_PAIR_ROWS, USER_ROWS):
            raise ValueError(f"unknown row_kind {self.row_kind!r}")
        if self.values.ndim != 2:
            raise ValueError("values must be 2-dimensional")
        if self.values.shape[0] != len(self.row_labels):
            raise ValueError("row_labels length must match the row count")
        if self.values.size and self.values.min() < 0:
            raise ValueError("flow matrix entries must be nonnegative")

    @property
    def n_rows(self):
        return self.values.shape[0]

    @property
    def n_epochs(self):
        return self.values.shape[1]


def parse_trip_csv(path, epoch_count=DEFAULT_EPOCH_COUNT, on_error="abort"):
    """Read a trip CSV with header ``card_id,origin,destination,entry_hour``.

    ``on_error`` is either "abort" (raise TripParseError on the first bad
    row) or "skip" (drop bad rows and keep going).  The station registry is
    the sorted union of all origins and destinations seen.
    """
    if on_error not in ("abort", "skip"):
        raise ValueError("on_error must be 'abort' or 'skip'")
    expected_header = ["card_id", "origin", "destination", "entry_hour"]
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != expected_header:
            raise TripParseError(f"expected header {','.join(expected_header)}", 1)
        for line_number, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                if len(row) != 4:
                    raise TripParseError(f"expected 4 fields, got {len(row)}", line_number)
                user_id, origin, destination, hour_text = (f.strip() for f in row)
                if not user_id or not origin or not destination:
                    raise TripParseError("empty identifier field", line_number)
                try:
                    epoch = int(hour_text)
                except ValueError:
                    raise TripParseError(f"entry_hour {hour_text!r} is not an integer",
                                         line_number) from None
                if not 0 <= epoch < epoch_count:
                    raise TripParseError(f"entry_hour {epoch} outside [0, {epoch_count})",
                                         line_number)
            except TripParseError:
                if on_error == "skip":
                    continue
                raise
            records.append(TripRecord(user_id, origin, destination, epoch))
    return TripDatabase.from_records(records, epoch_count=epoch_count)


def build_od_flow_matrix(db, index):
    """Count trips per directed station pair per epoch.

    Same-station trips are dropped: they carry no direction and therefore
    no tidal signal.  All other records must resolve against the index.
    """
    values = np.zeros((index.total_rows, db.epoch_count), dtype=np.float64)
    for rec in db.records:
        if rec.origin == rec.destination:
            continue
        row = index.row_of(rec.origin, rec.destination)
        if row is None:
            raise ValueError(f"pair {rec.origin}>{rec.destination} missing from index")
        values[row, rec.epoch] += 1.0
    return FlowMatrix(values=values, row_kind=OD_PAIR_ROWS, row_labels=index.row_labels())


def build_user_flow_matrix(db, users):
    """Count trips per user per epoch, stations ignored.

    Row order follows ``users``; a requested user with no trips yields a
    zero row.  Same-station trips count here: they are still user activity.
    """
    users = list(users)
    row_of = {u: i for i, u in enumerate(users)}
    if len(row_of) != len(users):
        raise ValueError("duplicate user in requested user list")
    values = np.zeros((len(users), db.epoch_count), dtype=np.float64)
    for rec in db.records:
        row = row_of.get(rec.user_id)
        if row is not None:
            values[row, rec.epoch] += 1.0
    return FlowMatrix(values=values, row_kind=USER_ROWS, row_labels=tuple(users))


def filter_users_by_trip_count(db, min_trips=1, max_trips=None):
    """Users whose total record count lies in [min_trips, max_trips],
    in first-seen order.  ``max_trips=None`` means no upper bound."""
    if max_trips is not None and min_trips > max_trips:
        raise ValueError("min_trips must not exceed max_trips")
    counts = db.trip_counts_by_user()
    selected = []
    for user in db.users_in_first_seen_order():
        c = counts[user]
        if c >= min_trips and (max_trips is None or c <= max_trips):
            selected.append(user)
    return selected


@dataclass(frozen=True)
class ArchetypeSpec:
    """One planted commuter type.

    Each user of the archetype draws a home and a (distinct) work station,
    then emits ``pair_count`` commute pairs: home->work at the morning peak
    and work->home at the evening peak.  ``peak_jitter`` is the probability
    that a trip lands one epoch off its peak (split evenly between -1/+1);
    ``noise_rate`` is the Poisson mean of extra uniformly random trips.
    """

    label: str
    home_dist: tuple[float, ...]
    work_dist: tuple[float, ...]
    morning_peak: int
    evening_peak: int
    pair_counts: tuple[int, ...]
    pair_count_probs: tuple[float, ...]
    noise_rate: float = 0.0
    peak_jitter: float = 0.0


@dataclass(frozen=True)
class SyntheticSpec:
    """Full recipe for a synthetic farecard corpus with planted tidal structure."""

    station_count: int
    archetypes: tuple[ArchetypeSpec, ...]
    users_per_archetype: int
    seed: int
    epoch_count: int = DEFAULT_EPOCH_COUNT

    def __post_init__(self):
        if self.station_count < 2:
            raise ValueError("need at least 2 stations for directed trips")
        if self.users_per_archetype < 1:
            raise ValueError("users_per_archetype must be >= 1")
        if not self.archetypes:
            raise ValueError("at least one archetype required")
        labels = [a.label for a in self.archetypes]
        if len(set(labels)) != len(labels):
            raise ValueError("archetype labels must be unique")
        for arch in self.archetypes:
            for name, dist in (("home_dist", arch.home_dist), ("work_dist", arch.work_dist)):
                if len(dist) != self.station_count:
                    raise ValueError(f"{arch.label}: {name} length != station_count")
                if min(dist) < 0 or abs(sum(dist) - 1.0) > 1e-9:
                    raise ValueError(f"{arch.label}: {name} must be a probability vector")
            if len(arch.pair_counts) != len(arch.pair_count_probs):
                raise ValueError(f"{arch.label}: pair count values/probs length mismatch")
            if abs(sum(arch.pair_count_probs) - 1.0) > 1e-9:
                raise ValueError(f"{arch.label}: pair_count_probs must sum to 1")
            if min(arch.pair_counts) < 0:
                raise ValueError(f"{arch.label}: pair counts must be >= 0")
            for peak in (arch.morning_peak, arch.evening_peak):
                if not 0 <= peak < self.epoch_count:
                    raise ValueError(f"{arch.label}: peak epoch {peak} out of range")
            if not 0.0 <= arch.peak_jitter <= 1.0:
                raise ValueError(f"{arch.label}: peak_jitter must lie in [0, 1]")
            if arch.noise_rate < 0:
                raise ValueError(f"{arch.label}: noise_rate must be >= 0")

    def station_ids(self):
        width = max(2, len(str(self.station_count - 1)))
        return tuple(f"S{i:0{width}d}" for i in range(self.station_count))


def _sample_index(rng, probs):
    return int(rng.choice(len(probs), p=probs))


def _jittered_epoch(rng, peak, jitter, epoch_count):
    if jitter <= 0.0:
        return peak
    delta = int(rng.choice([-1, 0, 1], p=[jitter / 2, 1.0 - jitter, jitter / 2]))
    return int(np.clip(peak + delta, 0, epoch_count - 1))


def generate_synthetic_trips(spec):
    """Generate a trip database plus the planted user -> archetype map.

    Deterministic given ``spec.seed``: a single generator is consumed in a
    fixed order (archetypes, then users, then pair/noise draws).
    """
    rng = np.random.default_rng(spec.seed)
    stations = spec.station_ids()
    records = []
    ground_truth = {}
    for arch in spec.archetypes:
        home_dist = np.asarray(arch.home_dist, dtype=np.float64)
        work_dist = np.asarray(arch.work_dist, dtype=np.float64)
        pair_counts = np.asarray(arch.pair_counts, dtype=np.int64)
        pair_probs = np.asarray(arch.pair_count_probs, dtype=np.float64)
        for i in range(spec.users_per_archetype):
            user_id = f"{arch.label}-{i:05d}"
            ground_truth[user_id] = arch.label
            home = _sample_index(rng, home_dist)
            conditioned = work_dist.copy()
            conditioned[home] = 0.0
            total = conditioned.sum()
            if total <= 0:
                raise ValueError(
                    f"{arch.label}: work distribution has no support distinct from home"
                )
            work = _sample_index(rng, conditioned / total)
            n_pairs = int(pair_counts[_sample_index(rng, pair_probs)])
            for _ in range(n_pairs):
                t_morning = _jittered_epoch(rng, arch.morning_peak, arch.peak_jitter,
                                            spec.epoch_count)
                t_evening = _jittered_epoch(rng, arch.evening_peak, arch.peak_jitter,
                                            spec.epoch_count)
                records.append(TripRecord(user_id, stations[home], stations[work], t_morning))
                records.append(TripRecord(user_id, stations[work], stations[home], t_evening))
            for _ in range(int(rng.poisson(arch.noise_rate))):
                origin = int(rng.integers(spec.station_count))
                dest = int(rng.integers(spec.station_count - 1))
                if dest >= origin:
                    dest += 1
                epoch = int(rng.integers(spec.epoch_count))
                records.append(TripRecord(user_id, stations[origin], stations[dest], epoch))
    db = TripDatabase.from_records(records, epoch_count=spec.epoch_count, stations=stations)
    return db, ground_truth
