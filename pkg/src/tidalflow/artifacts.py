"""Readers and writers for every pipeline artifact.

All output is deterministic: floats use 17-significant-digit decimal
formatting, JSON keys are sorted, newlines are ``\\n``, and no artifact
embeds timestamps or absolute paths.  Every JSON document carries a
``schema_version`` field.
"""

from __future__ import annotations

import csv
import json

import numpy as np

SCHEMA_VERSION = 1
FLOAT_FMT = "%.17g"


def format_value(value):
    if isinstance(value, (float, np.floating)):
        return FLOAT_FMT % float(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])


def write_json(path, payload):
    payload = dict(payload)
    payload["schema_version"] = SCHEMA_VERSION
    with open(path, "w", encoding="utf-8", newline="") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def write_trips_csv(path, db):
    write_csv(path, ["card_id", "origin", "destination", "entry_hour"],
              ((t.user_id, t.origin, t.destination, t.epoch)
               for t in db.records))


def write_ground_truth_csv(path, ground_truth):
    write_csv(path, ["user_id", "archetype"], sorted(ground_truth.items()))


def read_ground_truth_csv(path):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["user_id", "archetype"]:
            raise ValueError(f"{path}: unexpected ground-truth header {header}")
        return {row[0]: row[1] for row in reader}


def write_matrix_csv(path, corner_label, col_labels, row_labels, values):
    """Labeled matrix: first column holds row labels, first row the header."""
    rows = ([label, *row] for label, row in zip(row_labels, values))
    write_csv(path, [corner_label, *col_labels], rows)


def read_matrix_csv(path):
    """Inverse of write_matrix_csv: (corner, col_labels, row_labels, values)."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or len(header) < 2:
            raise ValueError(f"{path}: missing or short header")
        row_labels = []
        data = []
        for row in reader:
            row_labels.append(row[0])
            data.append([float(v) for v in row[1:]])
    values = np.array(data, dtype=np.float64) if data else \
        np.zeros((0, len(header) - 1))
    return header[0], tuple(header[1:]), tuple(row_labels), values


def component_labels(n_components):
    return tuple(f"component_{j}" for j in range(n_components))


def epoch_labels(n_epochs):
    return tuple(f"epoch_{t}" for t in range(n_epochs))


def write_factor_csvs(w_path, h_path, model, index):
    write_matrix_csv(w_path, "od_pair", component_labels(model.n_components),
                     index.row_labels(), model.w)
    write_matrix_csv(h_path, "component", epoch_labels(model.n_epochs),
                     component_labels(model.n_components), model.h)


def write_loss_trace_csv(path, trace):
    write_csv(path, ["iteration", "mse", "l1l2_penalty", "tidal_term",
                     "rho_term", "total"],
              ((r.iteration, r.mse, r.l1l2_penalty, r.tidal_term, r.rho_term,
                r.total) for r in trace))


def write_model_json(path, result, config_echo, seed, backend):
    model = result.model
    final = result.trace[-1]
    write_json(path, {
        "n_components": model.n_components,
        "n_epochs": model.n_epochs,
        "groups": {
            "morning": list(model.groups.morning),
            "evening": list(model.groups.evening),
            "other": list(model.groups.other),
        },
        "splits": {
            "morning_end": model.splits.morning_end,
            "afternoon_start": model.splits.afternoon_start,
        },
        "degenerate_components": list(model.degenerate),
        "tidal_active": model.tidal_active,
        "stop_reason": result.stop_reason,
        "warmup_end": result.warmup_end,
        "iterations": final.iteration,
        "final_losses": {
            "mse": final.mse,
            "l1l2_penalty": final.l1l2_penalty,
            "tidal_term": final.tidal_term,
            "rho_term": final.rho_term,
            "total": final.total,
        },
        "config": dict(config_echo),
        "seed": seed,
        "backend": backend,
    })


def write_signature_curves_csv(path, model):
    """Per-component temporal signature curves in long form, for plotting."""
    group_of = {}
    for name in ("morning", "evening", "other"):
        for j in getattr(model.groups, name):
            group_of[j] = name
    rows = []
    for j in range(model.n_components):
        for t in range(model.n_epochs):
            rows.append((f"component_{j}", group_of[j], t, model.h[j, t]))
    write_csv(path, ["component", "group", "epoch", "value"], rows)


def write_user_weights_csv(path, weights):
    write_matrix_csv(path, "user_id", weights.component_labels,
                     weights.user_labels, weights.values)


def read_user_weights_csv(path):
    from tidalflow.transfer import UserWeights

    corner, col_labels, row_labels, values = read_matrix_csv(path)
    if corner != "user_id":
        raise ValueError(f"{path}: expected a user weight matrix, got {corner!r}")
    return UserWeights(values=values, user_labels=row_labels,
                       component_labels=col_labels)


def write_station_scores_csv(path, scores):
    comp = "+".join(str(c) for c in scores.component_set)
    epochs = "+".join(str(t) for t in scores.epoch_range)
    write_csv(path, ["station_id", "attractivity", "generativity",
                     "component_set", "epoch_range"],
              ((s, scores.attractivity[i], scores.generativity[i], comp, epochs)
               for i, s in enumerate(scores.stations)))


def write_labels_csv(path, rows):
    """rows: (user_id, label, method, repetition, mixed_set_index)."""
    write_csv(path, ["user_id", "label", "method", "repetition",
                     "mixed_set_index"], rows)


def write_heatmap_csv(path, weights, labels):
    """Mean weight of each cluster in each component column (long form)."""
    values = weights.values
    rows = []
    for cluster in range(labels.n_clusters):
        mask = labels.labels == cluster
        means = values[mask].mean(axis=0) if mask.any() else np.zeros(values.shape[1])
        for col, label in enumerate(weights.component_labels):
            rows.append((cluster, label, means[col]))
    write_csv(path, ["cluster", "column", "mean_weight"], rows)


def stability_report_payload(reports, config_echo, seed):
    methods = {}
    for method, report in sorted(reports.items()):
        methods[method] = {
            "runs": [
                {
                    "repetition": run.repetition,
                    "pairwise_ari": [
                        {"i": i, "j": j, "ari": ari} for i, j, ari in run.pairwise
                    ],
                    "mean_ari": run.mean_ari,
                    "median_ari": run.median_ari,
                }
                for run in report.runs
            ],
            "summary": {
                "med_of_mean": report.summary.med_of_mean,
                "mad_of_mean": report.summary.mad_of_mean,
                "med_of_median": report.summary.med_of_median,
                "mad_of_median": report.summary.mad_of_median,
            },
        }
    return {"methods": methods, "config": dict(config_echo), "seed": seed}


def write_stability_report_json(path, reports, config_echo, seed):
    write_json(path, stability_report_payload(reports, config_echo, seed))


def read_stations_csv(path):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["station_id"]:
            raise ValueError(f"{path}: unexpected stations header {header}")
        return tuple(row[0] for row in reader)


def write_stations_csv(path, stations):
    write_csv(path, ["station_id"], ((s,) for s in stations))
