"""Whole-library acceptance suite.

One test per load-bearing guarantee, ordered from numerical foundations to
end-to-end behavior: gradient correctness, exact reordering and
normalization invariants, projection monotonicity, an exhaustively checked
agreement metric, regularizer steering, the benchmark ordering on planted
sparse-commuter data, archetype recovery, pipeline determinism, and
station-function ranking.  Each test states its own tolerance and, where it
matters, its wall-clock budget.
"""

import time
from fractions import Fraction

import numpy as np

from tidalflow.clustering import (
    StabilityConfig,
    adjusted_rand_index,
    kmeans_pp,
    stability_test,
)
from tidalflow.data import (
    ArchetypeSpec,
    ODPairIndex,
    SyntheticSpec,
    build_od_flow_matrix,
    build_user_flow_matrix,
    generate_synthetic_trips,
)
from tidalflow.factorization import (
    EpochSplits,
    SemanticGroups,
    TrainConfig,
    cross_band_mass,
    loss_gradients,
    normalize_factors,
    permute_components,
    tidal_symmetry_residual,
    total_loss,
    train,
)
from tidalflow.transfer import aggregate_station_flows, project_users

from conftest import tidal_spec
from test_cli import run_pipeline, write_workspace, ARTIFACTS


# ---------------------------------------------------------------------------
# planted corpora


def uniform_over(members, n):
    """Distribution over n stations, uniform on the given members."""
    return tuple(1.0 / len(members) if i in members else 0.0 for i in range(n))


def commuter(label, homes, works, morning, evening, n_stations,
             pair_counts=(4, 5), pair_count_probs=None, peak_jitter=0.0):
    if pair_count_probs is None:
        pair_count_probs = tuple(1.0 / len(pair_counts) for _ in pair_counts)
    return ArchetypeSpec(
        label=label,
        home_dist=uniform_over(homes, n_stations),
        work_dist=uniform_over(works, n_stations),
        morning_peak=morning,
        evening_peak=evening,
        pair_counts=pair_counts,
        pair_count_probs=pair_count_probs,
        peak_jitter=peak_jitter,
    )


def benchmark_spec():
    """Four archetypes, 2000 users, 80% of them sparse, jittered peaks.

    Sparse users ride one home/work pair (two trips); dense ones four or
    five pairs.  The jitter displaces individual peaks by one epoch with
    probability 0.3, which is what makes raw per-user clustering unstable
    while a shared station-trained basis stays put.
    """
    return SyntheticSpec(
        station_count=10,
        users_per_archetype=500,
        seed=77,
        archetypes=(
            commuter("a", {0, 1, 2}, {3, 4, 5}, 7, 16, 10,
                     pair_counts=(1, 4, 5), pair_count_probs=(0.8, 0.1, 0.1),
                     peak_jitter=0.3),
            commuter("b", {3, 4, 5}, {0, 1, 2}, 9, 18, 10,
                     pair_counts=(1, 4, 5), pair_count_probs=(0.8, 0.1, 0.1),
                     peak_jitter=0.3),
            commuter("c", {6, 7}, {8, 9}, 8, 17, 10,
                     pair_counts=(1, 4, 5), pair_count_probs=(0.8, 0.1, 0.1),
                     peak_jitter=0.3),
            commuter("d", {8, 9}, {6, 7}, 10, 19, 10,
                     pair_counts=(1, 4, 5), pair_count_probs=(0.8, 0.1, 0.1),
                     peak_jitter=0.3),
        ),
    )


def recovery_spec():
    """Four noise-free archetypes with disjoint peaks and dense users."""
    return SyntheticSpec(
        station_count=10,
        users_per_archetype=200,
        seed=21,
        archetypes=(
            commuter("a", {0, 1, 2}, {3, 4, 5}, 7, 16, 10),
            commuter("b", {3, 4, 5}, {0, 1, 2}, 9, 18, 10),
            commuter("c", {6, 7}, {8, 9}, 8, 17, 10),
            commuter("d", {8, 9}, {6, 7}, 10, 19, 10),
        ),
    )


def hub_spec():
    """One archetype commutes into station S03 at 7am; the other rides
    elsewhere with different peaks."""
    return SyntheticSpec(
        station_count=6,
        users_per_archetype=150,
        seed=33,
        archetypes=(
            commuter("into_hub", {0, 1, 2}, {3}, 7, 16, 6, pair_counts=(3, 4)),
            commuter("elsewhere", {4, 5}, {0, 1}, 10, 19, 6, pair_counts=(3, 4)),
        ),
    )


# ---------------------------------------------------------------------------
# oracles


def central_differences(fun, mat, step=1e-5):
    """Numerical gradient of fun() with respect to mat, edited in place."""
    out = np.zeros_like(mat)
    flat = mat.ravel()
    grad = out.ravel()
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        hi = fun()
        flat[i] = keep - step
        lo = fun()
        flat[i] = keep
        grad[i] = (hi - lo) / (2.0 * step)
    return out


def identity_ordered_product(w, h, identity_of_column):
    """Sum the rank-one terms of W @ H in component-identity order.

    Summing in a fixed order makes the float result a pure function of the
    rank-one terms, so any relabeling of columns must reproduce it bit for
    bit.
    """
    acc = np.zeros((w.shape[0], h.shape[1]))
    column_of_identity = np.argsort(np.asarray(identity_of_column))
    for k in range(w.shape[1]):
        j = column_of_identity[k]
        acc += np.outer(w[:, j], h[j, :])
    return acc


def partitions_with_at_most_three_blocks(n):
    """All partitions of n items into at most 3 blocks, as label tuples in
    restricted-growth form (first occurrence of each block label is in
    increasing order), which enumerates each set partition exactly once."""
    out = []

    def grow(prefix, used):
        if len(prefix) == n:
            out.append(tuple(prefix))
            return
        for b in range(min(used + 1, 3)):
            grow(prefix + [b], used + 1 if b == used else used)

    grow([0], 1)
    return out


def co_membership_pairs(labels):
    """Item pairs (i < j) placed in the same block."""
    n = len(labels)
    return frozenset((i, j) for i in range(n) for j in range(i + 1, n)
                     if labels[i] == labels[j])


def pair_counting_ari(labels_x, labels_y):
    """Agreement score from first principles: count co-membership pairs,
    compare against the chance expectation in exact rational arithmetic,
    and round once at the end."""
    n = len(labels_x)
    total = n * (n - 1) // 2
    if total == 0:
        return 1.0
    a = co_membership_pairs(labels_x)
    b = co_membership_pairs(labels_y)
    both = len(a & b)
    expected = Fraction(len(a) * len(b), total)
    maximum = Fraction(len(a) + len(b), 2)
    if maximum == expected:
        return 1.0
    return float((both - expected) / (maximum - expected))


# ---------------------------------------------------------------------------
# the suite


def test_01_gradients_match_central_differences():
    """Analytical gradients of the full loss agree with step-1e-5 central
    differences within 1e-4 relative error on 10 random instances."""
    started = time.monotonic()
    index = ODPairIndex.from_stations(["A", "B", "C", "D"])
    splits = EpochSplits(morning_end=3, afternoon_start=5)
    groups = SemanticGroups(morning=(0, 1), evening=(2,), other=(3,))
    config = TrainConfig(n_components=4, alpha=0.7, eta=0.3, gamma=1.3, rho=0.9)
    for seed in range(10):
        rng = np.random.default_rng(seed)
        v = rng.uniform(0.1, 2.0, (index.total_rows, 8))
        w = rng.uniform(0.1, 2.0, (index.total_rows, 4))
        h = rng.uniform(0.1, 2.0, (4, 8))
        grad_w, grad_h = loss_gradients(v, w, h, config, index, groups, splits)

        def loss():
            return total_loss(v, w, h, config, index, groups, splits)

        for analytic, mat in ((grad_w, w), (grad_h, h)):
            numeric = central_differences(loss, mat)
            rel = np.abs(numeric - analytic) / np.maximum(np.abs(analytic), 1.0)
            assert rel.max() < 1e-4
    assert time.monotonic() - started < 10.0


def test_02_component_relabeling_preserves_product_exactly():
    """Permuting components changes nothing about the reconstruction: under
    fixed-order summation the products agree bit for bit on 100 random
    models."""
    started = time.monotonic()
    rng = np.random.default_rng(42)
    for _ in range(100):
        n, k, t = rng.integers(3, 15), rng.integers(2, 8), rng.integers(3, 12)
        w = rng.uniform(0.1, 2.0, (n, k))
        h = rng.uniform(0.1, 2.0, (k, t))
        order = rng.permutation(k)
        w2, h2 = permute_components(w, h, order)
        before = identity_ordered_product(w, h, np.arange(k))
        after = identity_ordered_product(w2, h2, order)
        assert np.abs(before - after).max() == 0.0
    assert time.monotonic() - started < 5.0


def test_03_normalization_unit_rows_without_product_drift():
    """After normalize_factors every non-degenerate signature row has unit
    norm within 1e-9 and the reconstruction moves by less than 1e-9 in
    relative max norm."""
    rng = np.random.default_rng(7)
    for case in range(50):
        n, k, t = rng.integers(3, 20), rng.integers(2, 8), rng.integers(3, 16)
        w = rng.uniform(0.1, 2.0, (n, k))
        h = rng.uniform(0.1, 2.0, (k, t))
        if case % 10 == 0:
            h[rng.integers(k), :] = 0.0
        product = w @ h
        w2, h2, degenerate = normalize_factors(w, h)
        norms = np.sqrt((h2 * h2).sum(axis=1))
        live = [j for j in range(k) if j not in degenerate]
        assert np.abs(norms[live] - 1.0).max() <= 1e-9
        drift = np.abs(product - w2 @ h2).max() / np.abs(product).max()
        assert drift < 1e-9


def test_04_projection_residual_never_increases():
    """The squared-residual trace of user projection is non-increasing at
    every sweep across 50 random basis/user instances."""
    rng = np.random.default_rng(123)
    for _ in range(50):
        n = int(rng.integers(5, 40))
        k = int(rng.integers(2, 7))
        t = int(rng.integers(4, 30))
        h = rng.uniform(0.1, 2.0, (k, t))
        u = rng.uniform(0.0, 3.0, (n, t))
        result = project_users(u, h, max_iters=300, tolerance=1e-14,
                               seed=int(rng.integers(1 << 31)))
        trace = np.asarray(result.residual_trace)
        assert (np.diff(trace) <= 0.0).all()


def test_05_agreement_score_matches_exhaustive_pair_counting():
    """adjusted_rand_index equals a from-scratch pair-counting oracle on
    every pair of partitions of up to 8 items into at most 3 blocks, and
    reproduces the hand-derived -0.5 case."""
    started = time.monotonic()
    assert adjusted_rand_index([0, 0, 1, 1], [0, 1, 0, 1]) == -0.5
    for n in range(1, 9):
        parts = partitions_with_at_most_three_blocks(n)
        for i in range(len(parts)):
            for j in range(i, len(parts)):
                got = adjusted_rand_index(parts[i], parts[j])
                assert got == pair_counting_ari(parts[i], parts[j])
    assert time.monotonic() - started < 30.0


def test_06_regularizer_weights_steer_their_terms():
    """On a fixed four-station planted instance, raising the cross-band
    weight never raises the final cross-band mass, and raising the symmetry
    weight never raises the final symmetry mismatch."""
    started = time.monotonic()
    db, _ = generate_synthetic_trips(tidal_spec(station_count=4))
    index = ODPairIndex.from_stations(db.stations)
    values = build_od_flow_matrix(db, index).values

    masses = []
    for rho in (0.0, 1.0, 10.0):
        config = TrainConfig(rho=rho, warmup_iters=200, max_iters=2000,
                             mse_tolerance=1e-9, seed=3)
        result = train(values, index, config)
        assert result.model.tidal_active
        masses.append(cross_band_mass(result.raw_h, result.model.groups,
                                      result.model.splits))
    assert masses[0] >= masses[1] >= masses[2]

    residuals = []
    for gamma in (0.0, 1.0, 10.0):
        config = TrainConfig(gamma=gamma, warmup_iters=200, max_iters=2000,
                             mse_tolerance=1e-9, seed=3)
        result = train(values, index, config)
        model = result.model
        assert model.tidal_active
        residuals.append(tidal_symmetry_residual(
            model.w, model.h, index, model.groups, model.splits))
    assert residuals[0] >= residuals[1] >= residuals[2]
    assert time.monotonic() - started < 120.0


def test_07_shared_basis_is_most_stable_on_sparse_users():
    """On 2000 jittered users, 80% of them sparse, the shared-basis method
    beats both per-set refitting and raw-count clustering by at least 0.03
    median-of-mean agreement, and stays at or below the same-data control."""
    started = time.monotonic()
    db, _ = generate_synthetic_trips(benchmark_spec())
    users = db.users_in_first_seen_order()
    assert len(users) == 2000
    trips_per_user = build_user_flow_matrix(db, users).values.sum(axis=1)
    sparse_fraction = float((trips_per_user <= 3).mean())
    assert 0.75 <= sparse_fraction <= 0.85

    index = ODPairIndex.from_stations(db.stations)
    v = build_od_flow_matrix(db, index)
    config = StabilityConfig(n_training_sets=5, train_size=300, test_size=400,
                             n_clusters=6, repetitions=10, seed=101)
    reports = stability_test(db, v, config,
                             ("naive", "nmf", "s2u", "control"), TrainConfig())
    score = {m: reports[m].summary.med_of_mean for m in reports}
    assert score["s2u"] - score["nmf"] >= 0.03
    assert score["s2u"] - score["naive"] >= 0.03
    assert score["control"] >= score["s2u"]
    assert time.monotonic() - started < 600.0


def test_08_projected_clusters_recover_planted_archetypes():
    """On noise-free users with disjoint archetype peaks, clustering the
    projected weights reproduces the planted grouping at ARI >= 0.95."""
    db, truth = generate_synthetic_trips(recovery_spec())
    index = ODPairIndex.from_stations(db.stations)
    v = build_od_flow_matrix(db, index)
    users = db.users_in_first_seen_order()
    u = build_user_flow_matrix(db, users)

    model = train(v.values, index, TrainConfig(n_components=8)).model
    projected = project_users(u, model.h)
    km = kmeans_pp(projected.weights.values, 4, seed=5, item_ids=users)
    label_ids = {label: i for i, label in enumerate(sorted({*truth.values()}))}
    planted = [label_ids[truth[uid]] for uid in users]
    assert adjusted_rand_index(km.labels.labels, planted) >= 0.95


def test_09_pipeline_rerun_is_byte_identical(tmp_path):
    """Running synth/ingest/train/project/cluster/benchmark twice from the
    same seed yields byte-identical artifacts."""
    outputs = []
    for run in ("first", "second"):
        root = tmp_path / run
        root.mkdir()
        config_path, out_dir = write_workspace(root)
        run_pipeline(config_path)
        outputs.append(out_dir)
    for names in ARTIFACTS.values():
        for name in names:
            first = (outputs[0] / name).read_bytes()
            second = (outputs[1] / name).read_bytes()
            assert first == second, name


def test_10_commute_destination_tops_attractivity():
    """When one archetype commutes into a single hub at 7am, aggregating
    reconstructed flows over the 7am-peaking components ranks that hub
    first by attractivity."""
    db, _ = generate_synthetic_trips(hub_spec())
    index = ODPairIndex.from_stations(db.stations)
    v = build_od_flow_matrix(db, index)
    model = train(v.values, index, TrainConfig()).model

    peaks = model.h.argmax(axis=1)
    morning_components = [k for k in range(model.h.shape[0]) if peaks[k] == 7]
    assert morning_components
    scores = aggregate_station_flows(model.w, model.h, index,
                                     morning_components,
                                     range(model.h.shape[1]))
    assert scores.ranked_by_attractivity()[0] == "S03"
