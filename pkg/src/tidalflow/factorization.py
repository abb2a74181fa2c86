"""Tidal-regularized nonnegative factorization of OD-pair flow matrices.

The flow matrix is approximated by a nonnegative product ``W @ H``: each
row of ``H`` is a temporal signature (a weight curve over epochs) and each
row of ``W`` weights those signatures for one directed station pair.

The training objective is a generic elastic-net NMF loss plus a tidal
penalty that (a) pulls the accumulated morning flow of each forward pair
toward the accumulated afternoon flow of its reverse pair (and vice versa)
and (b) suppresses cross-band mass: morning signatures active in afternoon
epochs and evening signatures active in morning epochs.

Training is projected gradient descent with analytical gradients: step,
clamp at zero, and halve the step whenever the objective would increase.
A warm-up phase fits the generic loss alone; the learned signatures are
then classified into morning/evening/other groups, the factors reordered
so the groups are contiguous, and the tidal penalty switched on.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from tidalflow.backend import kernels

INIT_EPSILON = 1e-6
DEGENERATE_NORM = 1e-12
MAX_BACKTRACKS = 40
STEP_GROWTH = 1.2

STOP_MAX_ITERS = "max_iters"
STOP_MSE_TOLERANCE = "mse_tolerance"
STOP_STEP_COLLAPSED = "step_collapsed"


class TrainingError(RuntimeError):
    """Raised when training encounters a non-finite loss."""


@dataclass(frozen=True)
class EpochSplits:
    """Epoch-band boundaries: morning is [0, morning_end), afternoon is
    [afternoon_start, T), and the band between is an unregularized gap."""

    morning_end: int = 11
    afternoon_start: int = 14

    def validate(self, epoch_count):
        if not 0 < self.morning_end <= self.afternoon_start < epoch_count:
            raise ValueError(
                f"need 0 < morning_end <= afternoon_start < {epoch_count}, got "
                f"({self.morning_end}, {self.afternoon_start})"
            )


@dataclass(frozen=True)
class SemanticGroups:
    """Partition of component indices into morning, evening, and other."""

    morning: tuple[int, ...]
    evening: tuple[int, ...]
    other: tuple[int, ...]

    def __post_init__(self):
        all_indices = sorted(self.morning + self.evening + self.other)
        if all_indices != list(range(len(all_indices))):
            raise ValueError("groups must partition the component indices")

    @property
    def n_components(self):
        return len(self.morning) + len(self.evening) + len(self.other)


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for tidal-regularized factorization.

    ``alpha``/``eta`` weight the elastic-net penalty, ``gamma`` the tidal
    symmetry term, ``rho`` the cross-band suppression.  ``warmup_iters``
    generic-only steps precede the tidal phase; ``max_iters`` bounds the
    total step count.
    """

    n_components: int = 6
    alpha: float = 0.1
    eta: float = 0.5
    gamma: float = 1.0
    rho: float = 1.0
    learning_rate: float = 1e-3
    warmup_iters: int = 200
    max_iters: int = 2000
    mse_tolerance: float = 1e-6
    seed: int = 0
    min_mass_ratio: float = 0.05

    def __post_init__(self):
        if self.n_components < 1:
            raise ValueError("n_components must be >= 1")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError("eta must lie in [0, 1]")
        if self.alpha < 0 or self.gamma < 0 or self.rho < 0:
            raise ValueError("alpha, gamma, rho must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.warmup_iters < 0 or self.max_iters < 0:
            raise ValueError("iteration counts must be >= 0")
        if self.warmup_iters > self.max_iters:
            raise ValueError("warmup_iters must not exceed max_iters")


@dataclass(frozen=True)
class FactorModel:
    """Finalized factor pair with its semantic metadata.

    ``h`` rows are unit-norm except for indices in ``degenerate`` (rows
    whose norm fell below 1e-12 and were left untouched).  Arrays are
    read-only; the model is safe to share across threads.
    """

    w: np.ndarray
    h: np.ndarray
    groups: SemanticGroups
    splits: EpochSplits
    degenerate: tuple[int, ...] = ()
    tidal_active: bool = True

    def __post_init__(self):
        self.w.setflags(write=False)
        self.h.setflags(write=False)

    @property
    def n_components(self):
        return self.h.shape[0]

    @property
    def n_epochs(self):
        return self.h.shape[1]


@dataclass(frozen=True)
class TraceRow:
    """Loss breakdown after one accepted step (iteration 0 = initial state)."""

    iteration: int
    mse: float
    l1l2_penalty: float
    tidal_term: float
    rho_term: float
    total: float


@dataclass(frozen=True)
class TrainResult:
    """Finalized model plus training diagnostics.

    ``raw_w``/``raw_h`` are the factors exactly as the optimizer left them,
    before unit-norm conversion; band-mass measurements belong on these,
    since normalization rescales rows.
    """

    model: FactorModel
    trace: tuple[TraceRow, ...]
    stop_reason: str
    warmup_end: int
    raw_w: np.ndarray = None
    raw_h: np.ndarray = None

    def __post_init__(self):
        if self.raw_w is not None:
            self.raw_w.setflags(write=False)
        if self.raw_h is not None:
            self.raw_h.setflags(write=False)


def positive_uniform(rng, shape, scale):
    """Uniform draw from (1e-6, max(scale, 2e-6)]: strictly positive, since
    multiplicative dynamics and clamping cannot escape exact zeros."""
    high = max(float(scale), 2 * INIT_EPSILON)
    return (high + INIT_EPSILON) - rng.uniform(INIT_EPSILON, high, size=shape)


def init_factors(n_rows, n_components, n_epochs, value_mean, seed):
    """Strictly positive factor pair scaled so W @ H entries start near the
    data mean: both matrices draw uniformly from (1e-6, sqrt(mean/K)]."""
    if n_rows < 1 or n_components < 1 or n_epochs < 1:
        raise ValueError("factor dimensions must be positive")
    rng = np.random.default_rng(seed)
    scale = np.sqrt(max(float(value_mean), 0.0) / n_components)
    w = positive_uniform(rng, (n_rows, n_components), scale)
    h = positive_uniform(rng, (n_components, n_epochs), scale)
    return w, h


def generic_loss(values, w, h, alpha, eta):
    """Elastic-net NMF loss: squared residual plus L1 and squared-Frobenius
    penalties on both factors."""
    if w.shape[1] != h.shape[0] or (w.shape[0], h.shape[1]) != values.shape:
        raise ValueError("factor shapes do not conform to the data matrix")
    sse = kernels.fit_sse(values, w, h)
    l1 = w.sum() + h.sum()
    l2 = (w * w).sum() + (h * h).sum()
    return float(sse + alpha * eta * l1 + alpha * (1.0 - eta) * l2)


def _group_arrays(groups):
    morning = np.asarray(groups.morning, dtype=np.intp)
    evening = np.asarray(groups.evening, dtype=np.intp)
    if morning.size == 0 or evening.size == 0:
        raise ValueError("tidal loss needs at least one morning and one evening component")
    return morning, evening


def _tidal_terms(w, h, index, groups, splits, want_grads=False):
    """Symmetry and cross-band sums of the tidal penalty (unweighted), plus
    their gradients when requested.

    Row blocks follow the OD index layout (forward pairs first); component
    groups may be any disjoint index sets.  The accumulated morning flow of
    a row is its morning-component weights dotted with the morning-epoch
    mass of the morning signatures; afternoon flow likewise via evening
    components over afternoon epochs.
    """
    morning, evening = _group_arrays(groups)
    n_pairs = index.n_pairs
    if w.shape[0] != 2 * n_pairs:
        raise ValueError("weight matrix rows do not match the OD index layout")
    splits.validate(h.shape[1])
    t_morning = np.arange(0, splits.morning_end)
    t_afternoon = np.arange(splits.afternoon_start, h.shape[1])

    s_morning = h[np.ix_(morning, t_morning)].sum(axis=1)
    s_afternoon = h[np.ix_(evening, t_afternoon)].sum(axis=1)
    w_fwd_m = w[:n_pairs][:, morning]
    w_fwd_e = w[:n_pairs][:, evening]
    w_rev_m = w[n_pairs:][:, morning]
    w_rev_e = w[n_pairs:][:, evening]

    fwd_morning = w_fwd_m @ s_morning
    rev_afternoon = w_rev_e @ s_afternoon
    rev_morning = w_rev_m @ s_morning
    fwd_afternoon = w_fwd_e @ s_afternoon
    d_fwd = fwd_morning - rev_afternoon
    d_rev = rev_morning - fwd_afternoon
    symmetry = float(d_fwd @ d_fwd + d_rev @ d_rev)

    h_cross_m = h[np.ix_(morning, t_afternoon)]
    h_cross_e = h[np.ix_(evening, t_morning)]
    cross = float((h_cross_m * h_cross_m).sum() + (h_cross_e * h_cross_e).sum())

    if not want_grads:
        return symmetry, cross, None, None

    # d(symmetry)/dW: each forward/reverse row sees its own difference term
    # broadcast over the epoch-band mass of the matching component group.
    gw_sym = np.zeros_like(w)
    gw_sym[np.ix_(np.arange(n_pairs), morning)] += 2.0 * np.outer(d_fwd, s_morning)
    gw_sym[np.ix_(np.arange(n_pairs, 2 * n_pairs), evening)] -= 2.0 * np.outer(d_fwd, s_afternoon)
    gw_sym[np.ix_(np.arange(n_pairs, 2 * n_pairs), morning)] += 2.0 * np.outer(d_rev, s_morning)
    gw_sym[np.ix_(np.arange(n_pairs), evening)] -= 2.0 * np.outer(d_rev, s_afternoon)

    # d(symmetry)/dH enters via the band sums; d(cross)/dH is direct.
    gh_sym = np.zeros_like(h)
    ds_morning = 2.0 * (w_fwd_m.T @ d_fwd + w_rev_m.T @ d_rev)
    ds_afternoon = -2.0 * (w_rev_e.T @ d_fwd + w_fwd_e.T @ d_rev)
    gh_sym[np.ix_(morning, t_morning)] += ds_morning[:, None]
    gh_sym[np.ix_(evening, t_afternoon)] += ds_afternoon[:, None]

    gh_cross = np.zeros_like(h)
    gh_cross[np.ix_(morning, t_afternoon)] = 2.0 * h_cross_m
    gh_cross[np.ix_(evening, t_morning)] = 2.0 * h_cross_e
    return symmetry, cross, (gw_sym, gh_sym), gh_cross


def tidal_loss(w, h, index, groups, splits, gamma, rho):
    """Weighted tidal penalty: gamma * symmetry mismatch + rho * cross-band mass."""
    symmetry, cross, _, _ = _tidal_terms(w, h, index, groups, splits)
    return float(gamma * symmetry + rho * cross)


def tidal_symmetry_residual(w, h, index, groups, splits):
    """Unweighted sum of squared morning/afternoon mismatches over reverse pairs."""
    symmetry, _, _, _ = _tidal_terms(w, h, index, groups, splits)
    return symmetry


def cross_band_mass(h, groups, splits):
    """Squared Frobenius mass of morning signatures in afternoon epochs plus
    evening signatures in morning epochs."""
    morning, evening = _group_arrays(groups)
    splits.validate(h.shape[1])
    h_cross_m = h[np.ix_(morning, np.arange(splits.afternoon_start, h.shape[1]))]
    h_cross_e = h[np.ix_(evening, np.arange(0, splits.morning_end))]
    return float((h_cross_m * h_cross_m).sum() + (h_cross_e * h_cross_e).sum())


def total_loss(values, w, h, config, index=None, groups=None, splits=None):
    """Generic loss plus the tidal penalty (skipped when gamma = rho = 0)."""
    loss = generic_loss(values, w, h, config.alpha, config.eta)
    if config.gamma != 0.0 or config.rho != 0.0:
        if index is None or groups is None or splits is None:
            raise ValueError("tidal loss requires index, groups, and splits")
        loss += tidal_loss(w, h, index, groups, splits, config.gamma, config.rho)
    return loss


def loss_gradients(values, w, h, config, index=None, groups=None, splits=None):
    """Analytical gradients of the total loss with respect to W and H.

    The L1 term contributes its nonnegative-orthant subgradient (constant 1);
    the remaining terms are smooth.
    """
    _, gw, gh = kernels.fit_grads(values, w, h)
    gw += config.alpha * config.eta
    gh += config.alpha * config.eta
    gw += 2.0 * config.alpha * (1.0 - config.eta) * w
    gh += 2.0 * config.alpha * (1.0 - config.eta) * h
    if config.gamma != 0.0 or config.rho != 0.0:
        if index is None or groups is None or splits is None:
            raise ValueError("tidal gradients require index, groups, and splits")
        _, _, sym_grads, gh_cross = _tidal_terms(w, h, index, groups, splits,
                                                 want_grads=True)
        gw_sym, gh_sym = sym_grads
        gw += config.gamma * gw_sym
        gh += config.gamma * gh_sym
        gh += config.rho * gh_cross
    return gw, gh


def classify_components(h, splits, min_mass_ratio=0.05):
    """Assign each signature to morning/evening/other by its peak epoch.

    A signature peaking before ``morning_end`` is morning, at or after
    ``afternoon_start`` evening, in the gap band other.  Peak ties resolve
    to the smallest epoch.  Rows with total mass below
    ``min_mass_ratio * mean row mass`` are classified other regardless of
    peak: a near-empty signature has no reliable semantics.
    """
    splits.validate(h.shape[1])
    peaks = h.argmax(axis=1)
    masses = h.sum(axis=1)
    mass_floor = min_mass_ratio * masses.mean()
    morning, evening, other = [], [], []
    for j in range(h.shape[0]):
        if masses[j] < mass_floor:
            other.append(j)
        elif peaks[j] < splits.morning_end:
            morning.append(j)
        elif peaks[j] >= splits.afternoon_start:
            evening.append(j)
        else:
            other.append(j)
    return SemanticGroups(morning=tuple(morning), evening=tuple(evening),
                          other=tuple(other))


def permute_components(w, h, order):
    """Reindex components: column ``j`` of the new W is column ``order[j]``
    of the old (rows of H likewise).  The product is unchanged because each
    rank-one term is preserved; summing the same terms in a fixed order
    reproduces it bit for bit."""
    order = np.asarray(order, dtype=np.intp)
    if sorted(order.tolist()) != list(range(w.shape[1])):
        raise ValueError("order must be a permutation of the component indices")
    return w[:, order].copy(), h[order, :].copy()


def reorder_factors(w, h, groups):
    """Apply the semantic ordering: morning components first, evening last.

    Returns the permuted factors and the relabeled groups.
    """
    order = list(groups.morning) + list(groups.other) + list(groups.evening)
    w2, h2 = permute_components(w, h, order)
    k, k_other = len(groups.morning), len(groups.other)
    new_groups = SemanticGroups(
        morning=tuple(range(k)),
        other=tuple(range(k, k + k_other)),
        evening=tuple(range(k + k_other, groups.n_components)),
    )
    return w2, h2, new_groups


def normalize_factors(w, h):
    """Scale each H row to unit L2 norm, moving the norm into W's column.

    Rows with norm below 1e-12 are left untouched and reported as
    degenerate.  The product W @ H is preserved up to rounding.
    """
    norms = np.sqrt((h * h).sum(axis=1))
    w2 = w.copy()
    h2 = h.copy()
    degenerate = []
    for j, norm in enumerate(norms):
        if norm < DEGENERATE_NORM:
            degenerate.append(j)
            continue
        h2[j, :] /= norm
        w2[:, j] *= norm
    return w2, h2, tuple(degenerate)


def _breakdown(values, w, h, alpha, eta, tidal_parts):
    sse = kernels.fit_sse(values, w, h)
    l1l2 = alpha * eta * (w.sum() + h.sum()) \
        + alpha * (1.0 - eta) * ((w * w).sum() + (h * h).sum())
    if tidal_parts is None:
        tidal_term, rho_term = 0.0, 0.0
    else:
        index, groups, splits, gamma, rho = tidal_parts
        symmetry, cross, _, _ = _tidal_terms(w, h, index, groups, splits)
        tidal_term, rho_term = gamma * symmetry, rho * cross
    total = sse + l1l2 + tidal_term + rho_term
    return float(sse), float(l1l2), float(tidal_term), float(rho_term), float(total)


def train(values, index, config, splits=None):
    """Fit the factor model by two-phase projected gradient descent.

    Phase 1 (``warmup_iters`` steps) minimizes the generic loss; the
    signatures are then classified and reordered and the tidal penalty is
    added for phase 2, which runs until ``max_iters`` total steps or until
    the residual change drops below ``mse_tolerance``.  Every accepted step
    keeps the objective non-increasing (the step is halved until it does);
    factors are clamped at zero after each step.

    If the tidal weights are zero, ``index`` is None, or warm-up produces no
    morning or no evening signature, the tidal penalty stays off and
    training is plain elastic-net NMF (the model is flagged accordingly).
    """
    values = np.ascontiguousarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("cannot factorize an empty matrix")
    if values.min() < 0:
        raise ValueError("flow matrix entries must be nonnegative")
    want_tidal = (config.gamma != 0.0 or config.rho != 0.0) and index is not None
    if splits is None:
        splits = EpochSplits()
    splits.validate(values.shape[1])

    w, h = init_factors(values.shape[0], config.n_components, values.shape[1],
                        values.mean(), config.seed)
    phase_cfg = replace(config, gamma=0.0, rho=0.0)
    tidal_parts = None
    groups = None

    def objective(wt, ht):
        return total_loss(values, wt, ht, phase_cfg, index, groups, splits)

    current = objective(w, h)
    trace = [TraceRow(0, *_breakdown(values, w, h, config.alpha, config.eta, tidal_parts))]
    step = config.learning_rate
    stop_reason = STOP_MAX_ITERS
    warmup_end = min(config.warmup_iters, config.max_iters) if want_tidal else 0
    iteration = 0

    while iteration < config.max_iters:
        if want_tidal and iteration == warmup_end and tidal_parts is None:
            groups = classify_components(h, splits, config.min_mass_ratio)
            w, h, groups = reorder_factors(w, h, groups)
            if groups.morning and groups.evening:
                phase_cfg = config
                tidal_parts = (index, groups, splits, config.gamma, config.rho)
            else:
                want_tidal = False
            current = objective(w, h)

        gw, gh = loss_gradients(values, w, h, phase_cfg, index, groups, splits)
        accepted = False
        for _ in range(MAX_BACKTRACKS):
            w_try = np.maximum(w - step * gw, 0.0)
            h_try = np.maximum(h - step * gh, 0.0)
            candidate = objective(w_try, h_try)
            if not np.isfinite(candidate):
                raise TrainingError(f"non-finite loss at iteration {iteration}")
            if candidate <= current:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            stop_reason = STOP_STEP_COLLAPSED
            break
        w, h, current = w_try, h_try, candidate
        step = min(step * STEP_GROWTH, config.learning_rate)
        iteration += 1
        row = TraceRow(iteration, *_breakdown(values, w, h, config.alpha,
                                              config.eta, tidal_parts))
        in_tidal_phase = tidal_parts is not None or not want_tidal
        if in_tidal_phase and iteration > max(warmup_end, 1):
            if abs(trace[-1].mse - row.mse) < config.mse_tolerance:
                trace.append(row)
                stop_reason = STOP_MSE_TOLERANCE
                break
        trace.append(row)

    if groups is None:
        groups = classify_components(h, splits, config.min_mass_ratio)
        w, h, groups = reorder_factors(w, h, groups)
    raw_w, raw_h = w.copy(), h.copy()
    w, h, degenerate = normalize_factors(w, h)
    model = FactorModel(w=w, h=h, groups=groups, splits=splits,
                        degenerate=degenerate, tidal_active=tidal_parts is not None)
    return TrainResult(model=model, trace=tuple(trace), stop_reason=stop_reason,
                       warmup_end=warmup_end if tidal_parts is not None else 0,
                       raw_w=raw_w, raw_h=raw_h)
