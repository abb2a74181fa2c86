"""Projection of user flow vectors into a fixed signature basis, and
semantic aggregation of factors into station and user functions.

The station-trained signature matrix H is held fixed; each user's temporal
flow vector is expressed in that basis by multiplicative updates, which
keep the weights nonnegative and the residual non-increasing.  Aggregation
then sums either reconstructed flows (per station, split into in-flow and
out-flow) or user weights (per hand-picked component group).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tidalflow.backend import kernels
from tidalflow.data import FlowMatrix
from tidalflow.factorization import SemanticGroups, positive_uniform

PROJECTION_DENOM_FLOOR = 1e-12


class ProjectionError(RuntimeError):
    """Raised when a user weight row turns non-finite during projection."""

    def __init__(self, message, user_row):
        super().__init__(message)
        self.user_row = user_row


@dataclass(frozen=True)
class UserWeights:
    """Nonnegative user-by-component weight matrix with its labels."""

    values: np.ndarray
    user_labels: tuple[str, ...]
    component_labels: tuple[str, ...]

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ValueError("values must be 2-dimensional")
        if self.values.shape != (len(self.user_labels), len(self.component_labels)):
            raise ValueError("labels do not match the weight matrix shape")
        if self.values.size and self.values.min() < 0:
            raise ValueError("weights must be nonnegative")
        self.values.setflags(write=False)


@dataclass(frozen=True)
class ProjectionResult:
    """Projected weights plus the squared-residual trace, one entry per
    sweep starting from the initial state."""

    weights: UserWeights
    residual_trace: tuple[float, ...]
    n_iters: int
    converged: bool


@dataclass(frozen=True)
class StationFunctionScores:
    """Per-station accumulated reconstructed flows over a component set and
    epoch range: attractivity counts in-flow, generativity out-flow."""

    stations: tuple[str, ...]
    attractivity: np.ndarray
    generativity: np.ndarray
    component_set: tuple[int, ...]
    epoch_range: tuple[int, ...]

    def __post_init__(self):
        if len(self.attractivity) != len(self.stations) or \
                len(self.generativity) != len(self.stations):
            raise ValueError("score arrays must match the station list")
        if (self.attractivity < 0).any() or (self.generativity < 0).any():
            raise ValueError("scores must be nonnegative")
        self.attractivity.setflags(write=False)
        self.generativity.setflags(write=False)

    def ranked_by_attractivity(self):
        """Station ids from strongest to weakest in-flow (ties keep station
        order, so ranking is deterministic)."""
        order = np.argsort(-self.attractivity, kind="stable")
        return tuple(self.stations[i] for i in order)


def _as_matrix_and_labels(u):
    if isinstance(u, FlowMatrix):
        return u.values, u.row_labels
    values = np.asarray(u, dtype=np.float64)
    return values, tuple(f"u{i}" for i in range(values.shape[0]))


def project_users(u, h, max_iters=500, tolerance=1e-6, seed=0):
    """Express user flow vectors in the fixed basis ``h``.

    Starts from strictly positive random weights and repeats the
    multiplicative update w *= (U Hᵀ) / (W H Hᵀ) (denominator floored at
    1e-12) until the squared Frobenius residual changes by less than
    ``tolerance`` relative to its previous value, or ``max_iters`` sweeps.
    ``h`` is never modified.
    """
    values, user_labels = _as_matrix_and_labels(u)
    h = np.asarray(h, dtype=np.float64)
    if values.ndim != 2 or h.ndim != 2 or values.shape[1] != h.shape[1]:
        raise ValueError("user matrix and basis must share the epoch axis")
    if values.size and values.min() < 0:
        raise ValueError("user flows must be nonnegative")

    n_users, k = values.shape[0], h.shape[0]
    rng = np.random.default_rng(seed)
    scale = np.sqrt(max(float(values.mean()) if values.size else 0.0, 0.0) / k)
    w = positive_uniform(rng, (n_users, k), scale)

    numer = values @ h.T
    gram = np.ascontiguousarray(h @ h.T)
    w = np.ascontiguousarray(w)
    numer = np.ascontiguousarray(numer)

    trace = [float(kernels.fit_sse(values, w, h))]
    converged = False
    iters = 0
    for iters in range(1, max_iters + 1):
        kernels.mu_step(w, numer, gram, PROJECTION_DENOM_FLOOR)
        if not np.isfinite(w).all():
            bad = int(np.where(~np.isfinite(w).all(axis=1))[0][0])
            raise ProjectionError(f"non-finite weights for user row {bad}", bad)
        residual = float(kernels.fit_sse(values, w, h))
        previous = trace[-1]
        trace.append(residual)
        denom = previous if previous > 0 else 1.0
        if abs(previous - residual) / denom < tolerance:
            converged = True
            break

    weights = UserWeights(
        values=w,
        user_labels=tuple(user_labels),
        component_labels=tuple(f"w{j}" for j in range(k)),
    )
    return ProjectionResult(weights=weights, residual_trace=tuple(trace),
                            n_iters=iters, converged=converged)


def aggregate_station_flows(w, h, index, component_set, epoch_range):
    """Per-station in-flow and out-flow of the reconstruction restricted to
    ``component_set`` and ``epoch_range``.

    The restricted reconstruction W[:, G] @ H[G, epochs] is summed over the
    chosen epochs for each OD row, then accumulated onto the row's
    destination (attractivity) and origin (generativity).
    """
    component_set = tuple(sorted(set(int(c) for c in component_set)))
    if not component_set:
        raise ValueError("component_set must not be empty")
    w = np.asarray(w, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if any(c < 0 or c >= h.shape[0] for c in component_set):
        raise ValueError("component_set indices out of range")
    epoch_range = tuple(int(t) for t in epoch_range)
    if not epoch_range:
        raise ValueError("epoch_range must not be empty")
    if any(t < 0 or t >= h.shape[1] for t in epoch_range):
        raise ValueError("epoch_range outside the epoch axis")
    if w.shape[0] != index.total_rows:
        raise ValueError("weight matrix rows do not match the OD index")

    comps = np.asarray(component_set, dtype=np.intp)
    epochs = np.asarray(epoch_range, dtype=np.intp)
    row_flow = w[:, comps] @ h[np.ix_(comps, epochs)].sum(axis=1)

    n_stations = len(index.stations)
    attractivity = np.bincount(index.destination_indices(), weights=row_flow,
                               minlength=n_stations)
    generativity = np.bincount(index.origin_indices(), weights=row_flow,
                               minlength=n_stations)
    return StationFunctionScores(
        stations=index.stations,
        attractivity=attractivity,
        generativity=generativity,
        component_set=component_set,
        epoch_range=epoch_range,
    )


def semantic_grouping(groups: SemanticGroups):
    """Default aggregation plan: merge all morning components, merge all
    evening components, keep the rest as singletons."""
    plan = []
    if groups.morning:
        plan.append(tuple(groups.morning))
    plan.extend((j,) for j in groups.other)
    if groups.evening:
        plan.append(tuple(groups.evening))
    return plan


def aggregate_user_weights(weights, groups=None, grouping=None):
    """Sum user weight columns over disjoint component groups.

    ``grouping`` is a list of index sets; when omitted it is derived from
    ``groups`` (merge morning, merge evening, keep others separate).  Output
    column labels concatenate the member indices, e.g. "w1+2".
    """
    if grouping is None:
        if groups is None:
            raise ValueError("need either an explicit grouping or semantic groups")
        grouping = semantic_grouping(groups)
    cleaned = []
    seen = set()
    k = len(weights.component_labels)
    for group in grouping:
        members = tuple(sorted(set(int(j) for j in group)))
        if not members:
            raise ValueError("grouping sets must not be empty")
        if any(j < 0 or j >= k for j in members):
            raise ValueError("grouping indices out of range")
        if seen & set(members):
            raise ValueError("grouping sets must be disjoint")
        seen.update(members)
        cleaned.append(members)

    columns = [weights.values[:, list(members)].sum(axis=1) for members in cleaned]
    labels = tuple("w" + "+".join(str(j) for j in members) for members in cleaned)
    return UserWeights(
        values=np.column_stack(columns) if columns else np.zeros((len(weights.user_labels), 0)),
        user_labels=weights.user_labels,
        component_labels=labels,
    )
