"""Command-line pipeline driver.

Commands chain through files in the output directory::

    tidalflow synth     --config cfg  # trips.csv, ground_truth.csv
    tidalflow ingest    --config cfg  # stations, OD/user flow matrices, summary
    tidalflow train     --config cfg  # factors, loss trace, model metadata
    tidalflow project   --config cfg  # user weights, aggregates, station scores
    tidalflow cluster   --config cfg  # labels, cluster heatmap data
    tidalflow benchmark --config cfg  # stability report, benchmark labels

Every command is deterministic given (inputs, config, seed); stage seeds
are derived from the root seed so stages can be re-run independently.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from tidalflow import artifacts
from tidalflow.backend import BACKEND_NAME
from tidalflow.clustering import kmeans_pp, stability_test
from tidalflow.config import ConfigError, load_config
from tidalflow.data import (
    ArchetypeSpec,
    ODPairIndex,
    SyntheticSpec,
    TripDatabase,
    TripParseError,
    USER_ROWS,
    FlowMatrix,
    build_od_flow_matrix,
    build_user_flow_matrix,
    filter_users_by_trip_count,
    generate_synthetic_trips,
    parse_trip_csv,
)
from tidalflow.factorization import SemanticGroups, train
from tidalflow.seeding import derive_seed
from tidalflow.transfer import (
    aggregate_station_flows,
    aggregate_user_weights,
    project_users,
)


class CliError(RuntimeError):
    """User-facing command failure: message printed, exit code 1."""


def _require(path, hint):
    if not os.path.exists(path):
        raise CliError(f"missing required input {path} ({hint})")
    return path


def _out_path(cfg, name):
    return os.path.join(cfg.out_dir, name)


ARCHETYPE_KEYS = {"label", "home_dist", "work_dist", "morning_peak",
                  "evening_peak", "pair_counts", "pair_count_probs",
                  "noise_rate", "peak_jitter"}
SPEC_KEYS = {"station_count", "users_per_archetype", "archetypes",
             "epoch_count", "seed"}


def load_synth_spec(path, default_seed, default_epochs):
    """Read a synthetic-data recipe from JSON (see README for the schema)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise CliError(f"cannot read synth spec {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"synth spec {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise CliError(f"synth spec {path} must be a JSON object")
    unknown = sorted(set(doc) - SPEC_KEYS)
    if unknown:
        raise CliError(f"synth spec {path}: unknown keys {', '.join(unknown)}")
    archetypes = []
    for i, entry in enumerate(doc.get("archetypes", [])):
        bad = sorted(set(entry) - ARCHETYPE_KEYS)
        if bad:
            raise CliError(f"synth spec archetype {i}: unknown keys {', '.join(bad)}")
        try:
            archetypes.append(ArchetypeSpec(
                label=entry["label"],
                home_dist=tuple(entry["home_dist"]),
                work_dist=tuple(entry["work_dist"]),
                morning_peak=int(entry["morning_peak"]),
                evening_peak=int(entry["evening_peak"]),
                pair_counts=tuple(int(c) for c in entry["pair_counts"]),
                pair_count_probs=tuple(float(p) for p in entry["pair_count_probs"]),
                noise_rate=float(entry.get("noise_rate", 0.0)),
                peak_jitter=float(entry.get("peak_jitter", 0.0)),
            ))
        except KeyError as exc:
            raise CliError(f"synth spec archetype {i}: missing key {exc}") from exc
    try:
        return SyntheticSpec(
            station_count=int(doc["station_count"]),
            archetypes=tuple(archetypes),
            users_per_archetype=int(doc["users_per_archetype"]),
            seed=int(doc.get("seed", default_seed)),
            epoch_count=int(doc.get("epoch_count", default_epochs)),
        )
    except KeyError as exc:
        raise CliError(f"synth spec {path}: missing key {exc}") from exc
    except ValueError as exc:
        raise CliError(f"synth spec {path}: {exc}") from exc


def cmd_synth(cfg):
    if not cfg.synth_spec:
        raise CliError("synth needs the synth_spec config key (path to a JSON recipe)")
    _require(cfg.synth_spec, "synthetic data recipe")
    spec = load_synth_spec(cfg.synth_spec, derive_seed(cfg.seed, "synth"),
                           cfg.epoch_count)
    db, ground_truth = generate_synthetic_trips(spec)
    trips = _out_path(cfg, "trips.csv")
    truth = _out_path(cfg, "ground_truth.csv")
    artifacts.write_trips_csv(trips, db)
    artifacts.write_ground_truth_csv(truth, ground_truth)
    return [trips, truth]


def _load_db(cfg):
    path = cfg.trips_csv or _out_path(cfg, "trips.csv")
    _require(path, "trip records; set trips_csv or run synth first")
    try:
        return parse_trip_csv(path, epoch_count=cfg.epoch_count)
    except TripParseError as exc:
        raise CliError(f"{path}:{exc.line_number}: {exc}") from exc


def _filtered_db(cfg, db):
    users = filter_users_by_trip_count(db, cfg.min_trips, cfg.max_trips)
    if not users:
        raise CliError("trip-count filter removed every user")
    if len(users) == len(db.users_in_first_seen_order()):
        return db, users
    keep = set(users)
    records = tuple(r for r in db.records if r.user_id in keep)
    return TripDatabase.from_records(records, epoch_count=db.epoch_count,
                                     stations=db.stations), users


def cmd_ingest(cfg):
    db = _load_db(cfg)
    _, users = _filtered_db(cfg, db)
    index = ODPairIndex.from_stations(db.stations)
    v = build_od_flow_matrix(db, index)
    u = build_user_flow_matrix(db, users)
    histogram = [0] * db.epoch_count
    for record in db.records:
        histogram[record.epoch] += 1

    stations = _out_path(cfg, "stations.csv")
    od_flow = _out_path(cfg, "od_flow.csv")
    user_flow = _out_path(cfg, "user_flow.csv")
    summary = _out_path(cfg, "ingest_summary.json")
    artifacts.write_stations_csv(stations, db.stations)
    artifacts.write_matrix_csv(od_flow, "od_pair",
                               artifacts.epoch_labels(db.epoch_count),
                               index.row_labels(), v.values)
    artifacts.write_matrix_csv(user_flow, "user_id",
                               artifacts.epoch_labels(db.epoch_count),
                               u.row_labels, u.values)
    artifacts.write_json(summary, {
        "trip_count": len(db.records),
        "station_count": len(db.stations),
        "user_count": len(users),
        "total_users": len(db.users_in_first_seen_order()),
        "epoch_count": db.epoch_count,
        "per_epoch_histogram": histogram,
    })
    return [stations, od_flow, user_flow, summary]


def _load_od_flow(cfg):
    stations_path = _require(_out_path(cfg, "stations.csv"),
                             "station registry; run ingest first")
    od_path = _require(_out_path(cfg, "od_flow.csv"),
                       "OD flow matrix; run ingest first")
    stations = artifacts.read_stations_csv(stations_path)
    index = ODPairIndex.from_stations(stations)
    corner, _, row_labels, values = artifacts.read_matrix_csv(od_path)
    if corner != "od_pair" or row_labels != index.row_labels():
        raise CliError(f"{od_path} does not match the station registry")
    return index, values


def cmd_train(cfg):
    index, values = _load_od_flow(cfg)
    splits = cfg.epoch_splits()
    train_cfg = cfg.train_config(derive_seed(cfg.seed, "train"))
    result = train(values, index, train_cfg, splits)

    w_path = _out_path(cfg, "factors_w.csv")
    h_path = _out_path(cfg, "factors_h.csv")
    trace_path = _out_path(cfg, "loss_trace.csv")
    model_path = _out_path(cfg, "model.json")
    curves_path = _out_path(cfg, "signature_curves.csv")
    artifacts.write_factor_csvs(w_path, h_path, result.model, index)
    artifacts.write_loss_trace_csv(trace_path, result.trace)
    artifacts.write_model_json(model_path, result, cfg.echo(),
                               cfg.seed, BACKEND_NAME)
    artifacts.write_signature_curves_csv(curves_path, result.model)
    return [w_path, h_path, trace_path, model_path, curves_path]


def _load_model_parts(cfg):
    h_path = _require(_out_path(cfg, "factors_h.csv"), "run train first")
    model_path = _require(_out_path(cfg, "model.json"), "run train first")
    corner, _, h_labels, h = artifacts.read_matrix_csv(h_path)
    if corner != "component":
        raise CliError(f"{h_path} is not a signature matrix export")
    meta = artifacts.read_json(model_path)
    groups = SemanticGroups(
        morning=tuple(meta["groups"]["morning"]),
        evening=tuple(meta["groups"]["evening"]),
        other=tuple(meta["groups"]["other"]),
    )
    return h, h_labels, groups, meta


def _parse_index_list(text, validate_range, what):
    try:
        indices = tuple(int(part) for part in text.split("+"))
    except ValueError as exc:
        raise CliError(f"cannot parse {what} {text!r}: use e.g. 0+2+5") from exc
    for idx in indices:
        if not 0 <= idx < validate_range:
            raise CliError(f"{what} index {idx} out of range [0, {validate_range})")
    return indices


def _score_components(cfg, groups, n_components):
    choice = cfg.score_components
    if choice == "all":
        return tuple(range(n_components))
    if choice in ("morning", "evening"):
        members = getattr(groups, choice)
        if not members:
            raise CliError(f"no {choice} components were learned; "
                           f"set score_components = all or an explicit list")
        return members
    return _parse_index_list(choice, n_components, "score_components")


def _score_epochs(cfg, n_epochs):
    choice = cfg.score_epochs
    if choice == "all":
        return tuple(range(n_epochs))
    if choice == "morning":
        return tuple(range(0, cfg.morning_end))
    if choice == "afternoon":
        return tuple(range(cfg.afternoon_start, n_epochs))
    return _parse_index_list(choice, n_epochs, "score_epochs")


def cmd_project(cfg):
    user_path = _require(_out_path(cfg, "user_flow.csv"), "run ingest first")
    w_path = _require(_out_path(cfg, "factors_w.csv"), "run train first")
    corner, _, user_labels, u_values = artifacts.read_matrix_csv(user_path)
    if corner != "user_id":
        raise CliError(f"{user_path} is not a user flow export")
    h, _, groups, _ = _load_model_parts(cfg)
    _, _, w_labels, w = artifacts.read_matrix_csv(w_path)
    index, _ = _load_od_flow(cfg)
    if w_labels != index.row_labels():
        raise CliError(f"{w_path} does not match the station registry")

    u = FlowMatrix(values=u_values, row_kind=USER_ROWS, row_labels=user_labels)
    result = project_users(u, h, max_iters=cfg.projection_max_iters,
                           tolerance=cfg.projection_tolerance,
                           seed=derive_seed(cfg.seed, "project"))
    aggregated = aggregate_user_weights(result.weights, groups)
    components = _score_components(cfg, groups, h.shape[0])
    epochs = _score_epochs(cfg, h.shape[1])
    scores = aggregate_station_flows(w, h, index, components, epochs)

    weights_path = _out_path(cfg, "user_weights.csv")
    agg_path = _out_path(cfg, "user_weights_aggregated.csv")
    scores_path = _out_path(cfg, "station_scores.csv")
    artifacts.write_user_weights_csv(weights_path, result.weights)
    artifacts.write_user_weights_csv(agg_path, aggregated)
    artifacts.write_station_scores_csv(scores_path, scores)
    return [weights_path, agg_path, scores_path]


def cmd_cluster(cfg):
    weights_path = _require(_out_path(cfg, "user_weights.csv"), "run project first")
    agg_path = _require(_out_path(cfg, "user_weights_aggregated.csv"),
                        "run project first")
    weights = artifacts.read_user_weights_csv(weights_path)
    aggregated = artifacts.read_user_weights_csv(agg_path)
    km = kmeans_pp(weights.values, cfg.n_clusters,
                   derive_seed(cfg.seed, "cluster"),
                   max_iters=cfg.kmeans_max_iters,
                   item_ids=weights.user_labels)

    labels_path = _out_path(cfg, "labels.csv")
    heatmap_path = _out_path(cfg, "cluster_heatmap.csv")
    artifacts.write_labels_csv(labels_path, (
        (uid, int(label), "s2u", 0, 0)
        for uid, label in zip(km.labels.item_ids, km.labels.labels)
    ))
    artifacts.write_heatmap_csv(heatmap_path, aggregated, km.labels)
    return [labels_path, heatmap_path]


def cmd_benchmark(cfg):
    db = _load_db(cfg)
    db, _ = _filtered_db(cfg, db)
    index = ODPairIndex.from_stations(db.stations)
    v = build_od_flow_matrix(db, index)
    stability_cfg = cfg.stability_config(derive_seed(cfg.seed, "benchmark"))
    splits = cfg.epoch_splits()
    train_cfg = cfg.train_config(0)
    label_rows = []
    reports = stability_test(
        db, v, stability_cfg, cfg.methods, train_cfg, splits=splits,
        projection_max_iters=cfg.projection_max_iters,
        projection_tolerance=cfg.projection_tolerance,
        kmeans_max_iters=cfg.kmeans_max_iters, label_sink=label_rows,
    )

    report_path = _out_path(cfg, "stability_report.json")
    labels_path = _out_path(cfg, "benchmark_labels.csv")
    artifacts.write_stability_report_json(report_path, reports, cfg.echo(),
                                          cfg.seed)
    artifacts.write_labels_csv(labels_path, (
        (uid, int(label), method, rep, m)
        for method, rep, m, labels in label_rows
        for uid, label in zip(labels.item_ids, labels.labels)
    ))
    return [report_path, labels_path]


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "train": cmd_train,
    "project": cmd_project,
    "cluster": cmd_cluster,
    "benchmark": cmd_benchmark,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tidalflow",
        description="Tidal-regularized factorization pipeline for "
                    "origin-destination temporal flows.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", metavar="FILE",
                       help="flat key = value configuration file")
        p.add_argument("--out", metavar="DIR",
                       help="output directory (overrides out_dir)")
        p.add_argument("--seed", type=int, metavar="N",
                       help="root seed (overrides seed)")
        p.add_argument("--set", action="append", default=[], dest="overrides",
                       metavar="KEY=VALUE", help="override any config key")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        overrides = {}
        for item in args.overrides:
            key, sep, value = item.partition("=")
            if not sep or not key.strip():
                raise ConfigError(f"--set needs KEY=VALUE, got {item!r}")
            overrides[key.strip()] = value.strip()
        if args.out is not None:
            overrides["out_dir"] = args.out
        if args.seed is not None:
            overrides["seed"] = str(args.seed)
        cfg = load_config(args.config, overrides)
        os.makedirs(cfg.out_dir, exist_ok=True)
        written = COMMANDS[args.command](cfg)
    except (CliError, ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
