"""k-means++ clustering, the Adjusted Rand Index, and the clustering
stability benchmark.

The stability protocol draws M disjoint training sets plus one shared test
set, clusters each mixed set (training ∪ test) with one of four methods,
and scores every pair of runs by the ARI of their labels on the shared
test users.  Methods: ``naive`` clusters raw temporal flow rows, ``nmf``
refits a plain factorization per mixed set and clusters its weights,
``s2u`` projects users onto a station-trained signature basis held fixed
across sets, and ``control`` repeats the s2u pipeline on one identical
mixed set with varying clustering seeds, isolating clustering-internal
randomness.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, replace

import numpy as np

from tidalflow.backend import kernels
from tidalflow.data import ODPairIndex, build_user_flow_matrix
from tidalflow.factorization import EpochSplits, FactorModel, TrainConfig, train
from tidalflow.seeding import derive_seed
from tidalflow.transfer import project_users

METHODS = ("naive", "nmf", "s2u", "control")


@dataclass(frozen=True)
class ClusterLabels:
    """Integer labels in [0, n_clusters) over an ordered item set."""

    item_ids: tuple[str, ...]
    labels: np.ndarray
    n_clusters: int

    def __post_init__(self):
        if self.labels.shape != (len(self.item_ids),):
            raise ValueError("labels must be a vector matching item_ids")
        if self.labels.size and not (
                (self.labels >= 0) & (self.labels < self.n_clusters)).all():
            raise ValueError("labels must lie in [0, n_clusters)")
        self.labels.setflags(write=False)


@dataclass(frozen=True)
class KMeansResult:
    labels: ClusterLabels
    centers: np.ndarray
    potential_trace: tuple[float, ...]
    n_iters: int
    converged: bool


def _seed_centers(points, n_clusters, rng):
    """k-means++ seeding: first center uniform, the rest proportional to
    squared distance to the nearest chosen center (uniform fallback when
    every point coincides with a center)."""
    n = points.shape[0]
    centers = np.empty((n_clusters, points.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centers[0] = points[first]
    dist_sq = ((points - centers[0]) ** 2).sum(axis=1)
    for j in range(1, n_clusters):
        total = dist_sq.sum()
        if total > 0:
            pick = int(rng.choice(n, p=dist_sq / total))
        else:
            pick = int(rng.integers(n))
        centers[j] = points[pick]
        dist_sq = np.minimum(dist_sq, ((points - centers[j]) ** 2).sum(axis=1))
    return centers


def _lloyd(points, n_clusters, rng, max_iters):
    """One seeded k-means run: returns (labels, centers, trace, iters,
    converged) with a non-increasing potential trace."""
    centers = _seed_centers(points, n_clusters, rng)
    labels = None
    trace = []
    converged = False
    iters = 0
    for iters in range(1, max_iters + 1):
        new_labels, potential = kernels.assign_labels(points, centers)
        trace.append(float(potential))
        if labels is not None and np.array_equal(new_labels, labels):
            converged = True
            break
        labels = new_labels
        centers, counts = kernels.update_centers(points, labels, n_clusters)
        empties = np.flatnonzero(counts == 0)
        if empties.size:
            dist_to_own = ((points - centers[labels]) ** 2).sum(axis=1)
            for j in empties:
                pick = int(dist_to_own.argmax())
                centers[j] = points[pick]
                dist_to_own[pick] = 0.0
    return labels, centers, trace, iters, converged


def kmeans_pp(points, n_clusters, seed, max_iters=300, item_ids=None,
              restarts=16):
    """k-means++ seeding followed by Lloyd iterations, best of ``restarts``
    independent runs by final potential (ties keep the earliest run).

    Each run iterates until assignments stabilize or ``max_iters``
    assignment rounds.  Ties in assignment go to the lowest center index; a
    cluster left empty by an update is reseeded to the point farthest from
    its assigned center (repeating for further empties with that point
    excluded).  Deterministic given (points, n_clusters, seed).
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError("points must be a 2-d matrix")
    n = points.shape[0]
    if n_clusters < 1:
        raise ValueError("n_clusters must be >= 1")
    if n_clusters > n:
        raise ValueError(f"n_clusters ({n_clusters}) exceeds point count ({n})")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    if item_ids is None:
        item_ids = tuple(str(i) for i in range(n))
    elif len(item_ids) != n:
        raise ValueError("item_ids length must match the point count")

    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        run = _lloyd(points, n_clusters, rng, max_iters)
        if best is None or run[2][-1] < best[2][-1]:
            best = run
    labels, centers, trace, iters, converged = best

    result_labels = ClusterLabels(item_ids=tuple(item_ids),
                                  labels=labels.astype(np.int64),
                                  n_clusters=n_clusters)
    return KMeansResult(labels=result_labels, centers=centers,
                        potential_trace=tuple(trace), n_iters=iters,
                        converged=converged)


def _label_list(x):
    if isinstance(x, ClusterLabels):
        return x.item_ids, x.labels.tolist()
    if isinstance(x, np.ndarray):
        return None, x.tolist()
    return None, list(x)


def adjusted_rand_index(x, y):
    """Adjusted Rand Index of two labelings of the same items.

    Pair-counting form computed in exact integer arithmetic with a single
    final division; 1.0 for identical partitions (up to relabeling) and 1.0
    by convention when the adjustment is degenerate (both partitions all in
    one cluster, or all singletons).

    Accepts ClusterLabels (items matched by id, order-independent) or plain
    label sequences (items matched by position).
    """
    ids_x, lx = _label_list(x)
    ids_y, ly = _label_list(y)
    if ids_x is not None and ids_y is not None and ids_x != ids_y:
        if sorted(ids_x) != sorted(ids_y):
            raise ValueError("labelings cover different item sets")
        by_id = dict(zip(ids_y, ly))
        ly = [by_id[i] for i in ids_x]
    if len(lx) != len(ly):
        raise ValueError("labelings cover different item counts")
    n = len(lx)
    if n == 0:
        raise ValueError("cannot score empty labelings")

    joint = {}
    rows = {}
    cols = {}
    for a, b in zip(lx, ly):
        key = (a, b)
        joint[key] = joint.get(key, 0) + 1
        rows[a] = rows.get(a, 0) + 1
        cols[b] = cols.get(b, 0) + 1

    sum_comb = sum(c * (c - 1) // 2 for c in joint.values())
    a_comb = sum(c * (c - 1) // 2 for c in rows.values())
    b_comb = sum(c * (c - 1) // 2 for c in cols.values())
    total = n * (n - 1) // 2

    numer = 2 * (sum_comb * total - a_comb * b_comb)
    denom = (a_comb + b_comb) * total - 2 * a_comb * b_comb
    if denom == 0:
        return 1.0
    return numer / denom


@dataclass(frozen=True)
class StabilityConfig:
    """Protocol sizes for the stability benchmark."""

    n_training_sets: int
    train_size: int
    test_size: int
    n_clusters: int = 6
    repetitions: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_training_sets < 2:
            raise ValueError("need at least 2 training sets")
        if self.train_size < 1 or self.test_size < 1:
            raise ValueError("set sizes must be >= 1")
        if self.n_clusters < 1:
            raise ValueError("n_clusters must be >= 1")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")


def partition_for_stability(users, config, seed=None):
    """Draw M disjoint training sets and one disjoint test set uniformly.

    Returns (training_sets, test_set) as tuples of user ids; deterministic
    given the seed (defaults to the config seed).
    """
    users = list(users)
    need = config.n_training_sets * config.train_size + config.test_size
    if need > len(users):
        raise ValueError(
            f"partition needs {need} users but only {len(users)} are available")
    rng = np.random.default_rng(config.seed if seed is None else seed)
    order = rng.permutation(len(users))
    training_sets = []
    offset = 0
    for _ in range(config.n_training_sets):
        chunk = order[offset:offset + config.train_size]
        training_sets.append(tuple(users[i] for i in chunk))
        offset += config.train_size
    test_chunk = order[offset:offset + config.test_size]
    test_set = tuple(users[i] for i in test_chunk)
    return tuple(training_sets), test_set


@dataclass(frozen=True)
class MethodParams:
    """Everything one method run needs besides the data and the user split."""

    n_clusters: int
    cluster_seed: int
    train_config: TrainConfig | None = None
    splits: EpochSplits | None = None
    factor_seed: int = 0
    projection_max_iters: int = 500
    projection_tolerance: float = 1e-6
    projection_seed: int = 0
    station_model: FactorModel | None = None
    kmeans_max_iters: int = 300


def run_method(method, db, v, training_users, test_users, params):
    """Cluster the mixed set (training ∪ test) with one method and return
    the labels restricted to the test users.

    naive clusters raw user flow rows; nmf refits a plain factorization on
    the mixed set and clusters its weight rows; s2u and control project the
    mixed set onto the station model (``params.station_model``, or one
    trained here from ``v`` when absent) and cluster the projected weights.
    Control differs from s2u only in how the caller varies seeds and sets.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    mixed = list(training_users) + list(test_users)
    if len(set(mixed)) != len(mixed):
        raise ValueError("training and test users must not overlap")
    u = build_user_flow_matrix(db, mixed)

    if method == "naive":
        points = u.values
    elif method == "nmf":
        if params.train_config is None:
            raise ValueError("nmf method needs a train_config")
        cfg = replace(params.train_config, gamma=0.0, rho=0.0,
                      seed=params.factor_seed)
        points = train(u.values, None, cfg, params.splits).model.w
    else:
        model = params.station_model
        if model is None:
            if params.train_config is None:
                raise ValueError(f"{method} method needs a station model or a train_config")
            index = ODPairIndex.from_stations(db.stations)
            cfg = replace(params.train_config, seed=params.factor_seed)
            model = train(v.values, index, cfg, params.splits).model
        projected = project_users(u, model.h,
                                  max_iters=params.projection_max_iters,
                                  tolerance=params.projection_tolerance,
                                  seed=params.projection_seed)
        points = projected.weights.values

    km = kmeans_pp(points, params.n_clusters, params.cluster_seed,
                   max_iters=params.kmeans_max_iters, item_ids=mixed)
    position = {uid: i for i, uid in enumerate(mixed)}
    test_ids = tuple(test_users)
    labels = km.labels.labels[[position[uid] for uid in test_ids]]
    return ClusterLabels(item_ids=test_ids, labels=labels,
                         n_clusters=params.n_clusters)


@dataclass(frozen=True)
class RunRecord:
    """Pairwise ARI scores of one repetition: entries (i, j, ari) for every
    training-set pair i < j, with their mean and median."""

    repetition: int
    pairwise: tuple[tuple[int, int, float], ...]
    mean_ari: float
    median_ari: float


@dataclass(frozen=True)
class StabilitySummary:
    """MED/MAD across repetitions of the per-repetition mean and median ARI."""

    med_of_mean: float
    mad_of_mean: float
    med_of_median: float
    mad_of_median: float


@dataclass(frozen=True)
class StabilityReport:
    method: str
    runs: tuple[RunRecord, ...]
    summary: StabilitySummary


def pairwise_record(repetition, labelings):
    """Score every pair of labelings on their shared items."""
    pairs = []
    for i in range(len(labelings)):
        for j in range(i + 1, len(labelings)):
            pairs.append((i, j, adjusted_rand_index(labelings[i], labelings[j])))
    scores = [ari for _, _, ari in pairs]
    return RunRecord(repetition=repetition, pairwise=tuple(pairs),
                     mean_ari=float(np.mean(scores)),
                     median_ari=float(statistics.median(scores)))


def summarize_stability(runs):
    """MED and MAD over repetitions of both the mean and the median ARI."""
    if not runs:
        raise ValueError("need at least one run to summarize")
    means = [run.mean_ari for run in runs]
    medians = [run.median_ari for run in runs]
    med_of_mean = float(statistics.median(means))
    med_of_median = float(statistics.median(medians))
    return StabilitySummary(
        med_of_mean=med_of_mean,
        mad_of_mean=float(statistics.median(abs(v - med_of_mean) for v in means)),
        med_of_median=med_of_median,
        mad_of_median=float(statistics.median(abs(v - med_of_median) for v in medians)),
    )


def stability_test(db, v, config, methods, train_config, splits=None,
                   projection_max_iters=500, projection_tolerance=1e-6,
                   kmeans_max_iters=300, label_sink=None):
    """Run the full stability benchmark and return one report per method.

    Each repetition draws a fresh partition; the station model for s2u and
    control is retrained per repetition on the OD flow matrix and shared
    across that repetition's mixed sets.  Control reuses the first training
    set for every run, so only clustering randomness varies.  All seeds are
    derived from the config seed, so the benchmark is reproducible.

    ``label_sink``, when given, receives one (method, repetition,
    mixed_set_index, ClusterLabels) tuple per run for export.
    """
    for method in methods:
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}")
    users = db.users_in_first_seen_order()
    index = ODPairIndex.from_stations(db.stations)
    if v.n_rows != index.total_rows:
        raise ValueError("OD flow matrix does not match the station set")
    needs_model = any(m in ("s2u", "control") for m in methods)

    runs_by_method = {method: [] for method in methods}
    for rep in range(config.repetitions):
        training_sets, test_set = partition_for_stability(
            users, config, derive_seed(config.seed, "partition", rep))
        station_model = None
        if needs_model:
            cfg = replace(train_config,
                          seed=derive_seed(config.seed, "station", rep))
            station_model = train(v.values, index, cfg, splits).model
        for method in methods:
            labelings = []
            for m in range(config.n_training_sets):
                training = training_sets[0] if method == "control" else training_sets[m]
                if method == "control":
                    proj_seed = derive_seed(config.seed, method, "project", rep)
                else:
                    proj_seed = derive_seed(config.seed, method, "project", rep, m)
                params = MethodParams(
                    n_clusters=config.n_clusters,
                    cluster_seed=derive_seed(config.seed, method, "cluster", rep, m),
                    train_config=train_config,
                    splits=splits,
                    factor_seed=derive_seed(config.seed, method, "factor", rep, m),
                    projection_max_iters=projection_max_iters,
                    projection_tolerance=projection_tolerance,
                    projection_seed=proj_seed,
                    station_model=station_model if method in ("s2u", "control") else None,
                    kmeans_max_iters=kmeans_max_iters,
                )
                labels = run_method(method, db, v, training, test_set, params)
                labelings.append(labels)
                if label_sink is not None:
                    label_sink.append((method, rep, m, labels))
            runs_by_method[method].append(pairwise_record(rep, labelings))

    return {
        method: StabilityReport(method=method, runs=tuple(runs),
                                summary=summarize_stability(runs))
        for method, runs in runs_by_method.items()
    }
