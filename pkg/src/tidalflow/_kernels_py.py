"""Pure-numpy implementations of the hot kernels.

Same call signatures as the compiled module ``tidalflow._kernels``; the
active implementation is chosen in ``tidalflow.backend``.  Each function is
deterministic (fixed-order numpy reductions, no threading decisions made
here), so repeated runs on one machine reproduce bit-identical results.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "python"


def fit_sse(values, w, h):
    """Sum of squared entries of (values - w @ h)."""
    resid = w @ h
    resid -= values
    return float((resid * resid).sum())


def fit_grads(values, w, h):
    """Residual sum of squares and its gradients.

    Returns ``(sse, gw, gh)`` with ``gw = 2 (wh - values) h^T`` and
    ``gh = 2 w^T (wh - values)``.
    """
    resid = w @ h
    resid -= values
    sse = float((resid * resid).sum())
    resid *= 2.0
    return sse, resid @ h.T, w.T @ resid


def mu_step(w, numer, gram, floor):
    """One multiplicative-update sweep, in place.

    ``w *= numer / max(w @ gram, floor)``; the floor keeps rows with a
    vanishing denominator finite.
    """
    denom = w @ gram
    np.maximum(denom, floor, out=denom)
    w *= numer
    w /= denom


def assign_labels(points, centers):
    """Nearest-center assignment; ties go to the lowest center index.

    Returns ``(labels, potential)`` where potential is the sum of squared
    distances of each point to its assigned center.
    """
    deltas = points[:, None, :] - centers[None, :, :]
    dist2 = np.einsum("ijk,ijk->ij", deltas, deltas)
    labels = dist2.argmin(axis=1)
    potential = float(dist2[np.arange(points.shape[0]), labels].sum())
    return labels.astype(np.int64), potential


def update_centers(points, labels, n_centers):
    """Mean of each cluster's points; empty clusters keep a zero row and a
    zero count so the caller can reseed them."""
    dim = points.shape[1]
    centers = np.zeros((n_centers, dim), dtype=np.float64)
    counts = np.bincount(labels, minlength=n_centers).astype(np.int64)
    np.add.at(centers, labels, points)
    nonempty = counts > 0
    centers[nonempty] /= counts[nonempty, None]
    return centers, counts
