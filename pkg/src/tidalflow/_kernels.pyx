# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: fused residual/gradient passes, multiplicative
updates, and Lloyd sweeps.  Mirrors tidalflow._kernels_py."""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND_NAME = "compiled"


def fit_sse(values, w, h):
    cdef const double[:, ::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef const double[:, ::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef const double[:, ::1] hv = np.ascontiguousarray(h, dtype=np.float64)
    cdef Py_ssize_t n = v.shape[0], t_count = v.shape[1], k_count = wv.shape[1]
    cdef Py_ssize_t i, t, k
    cdef double acc, err, sse = 0.0
    with nogil:
        for i in range(n):
            for t in range(t_count):
                acc = 0.0
                for k in range(k_count):
                    acc += wv[i, k] * hv[k, t]
                err = acc - v[i, t]
                sse += err * err
    return sse


def fit_grads(values, w, h):
    cdef const double[:, ::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef const double[:, ::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef const double[:, ::1] hv = np.ascontiguousarray(h, dtype=np.float64)
    cdef Py_ssize_t n = v.shape[0], t_count = v.shape[1], k_count = wv.shape[1]
    gw_arr = np.zeros((n, k_count), dtype=np.float64)
    gh_arr = np.zeros((k_count, t_count), dtype=np.float64)
    cdef double[:, ::1] gw = gw_arr
    cdef double[:, ::1] gh = gh_arr
    cdef Py_ssize_t i, t, k
    cdef double acc, err, err2, sse = 0.0
    with nogil:
        for i in range(n):
            for t in range(t_count):
                acc = 0.0
                for k in range(k_count):
                    acc += wv[i, k] * hv[k, t]
                err = acc - v[i, t]
                sse += err * err
                err2 = 2.0 * err
                for k in range(k_count):
                    gw[i, k] += err2 * hv[k, t]
                    gh[k, t] += err2 * wv[i, k]
    return sse, gw_arr, gh_arr


def mu_step(w, numer, gram, floor):
    cdef double[:, ::1] wv = w
    cdef const double[:, ::1] av = np.ascontiguousarray(numer, dtype=np.float64)
    cdef const double[:, ::1] gv = np.ascontiguousarray(gram, dtype=np.float64)
    cdef Py_ssize_t n = wv.shape[0], k_count = wv.shape[1]
    cdef double fl = floor
    denom_arr = np.empty(k_count, dtype=np.float64)
    cdef double[::1] denom = denom_arr
    cdef Py_ssize_t i, k, j
    cdef double acc
    with nogil:
        for i in range(n):
            for k in range(k_count):
                acc = 0.0
                for j in range(k_count):
                    acc += wv[i, j] * gv[j, k]
                denom[k] = acc if acc > fl else fl
            for k in range(k_count):
                wv[i, k] = wv[i, k] * av[i, k] / denom[k]


def assign_labels(points, centers):
    cdef const double[:, ::1] x = np.ascontiguousarray(points, dtype=np.float64)
    cdef const double[:, ::1] c = np.ascontiguousarray(centers, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], dim = x.shape[1], k_count = c.shape[0]
    labels_arr = np.zeros(n, dtype=np.int64)
    cdef cnp.int64_t[::1] labels = labels_arr
    cdef Py_ssize_t i, j, k, best
    cdef double d, diff, best_d, potential = 0.0
    with nogil:
        for i in range(n):
            best = 0
            best_d = 0.0
            for j in range(dim):
                diff = x[i, j] - c[0, j]
                best_d += diff * diff
            for k in range(1, k_count):
                d = 0.0
                for j in range(dim):
                    diff = x[i, j] - c[k, j]
                    d += diff * diff
                if d < best_d:
                    best_d = d
                    best = k
            labels[i] = best
            potential += best_d
    return labels_arr, potential


def update_centers(points, labels, n_centers):
    cdef const double[:, ::1] x = np.ascontiguousarray(points, dtype=np.float64)
    cdef const cnp.int64_t[::1] lab = np.ascontiguousarray(labels, dtype=np.int64)
    cdef Py_ssize_t n = x.shape[0], dim = x.shape[1], kc = n_centers
    centers_arr = np.zeros((kc, dim), dtype=np.float64)
    counts_arr = np.zeros(kc, dtype=np.int64)
    cdef double[:, ::1] centers = centers_arr
    cdef cnp.int64_t[::1] counts = counts_arr
    cdef Py_ssize_t i, j, k
    with nogil:
        for i in range(n):
            k = lab[i]
            counts[k] += 1
            for j in range(dim):
                centers[k, j] += x[i, j]
        for k in range(kc):
            if counts[k] > 0:
                for j in range(dim):
                    centers[k, j] /= counts[k]
    return centers_arr, counts_arr
