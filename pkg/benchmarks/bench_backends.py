"""Compare the compiled kernels against the pure-numpy fallback.

Micro-benchmarks time each kernel in-process on both implementations;
the end-to-end section re-runs this script in a child process per backend
(the backend is fixed at import time) and times a full factorization.

Usage::

    python3 benchmarks/bench_backends.py [--repeats N] [--skip-train]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from tidalflow import _kernels_py
from tidalflow.backend import available_backends

try:
    from tidalflow import _kernels as _kernels_c
except ImportError:
    _kernels_c = None

IMPLEMENTATIONS = [("python", _kernels_py)]
if _kernels_c is not None:
    IMPLEMENTATIONS.append(("compiled", _kernels_c))


def make_cases(rng):
    """(name, kernel, args, in_place) tuples on domain-shaped data.

    Shapes mirror a 20-station OD matrix with 24 epochs and a few thousand
    users in a 6-component basis.
    """
    v = rng.uniform(0.0, 5.0, (380, 24))
    w = rng.uniform(0.1, 2.0, (380, 6))
    h = rng.uniform(0.1, 2.0, (6, 24))
    weights = rng.uniform(0.1, 2.0, (5000, 6))
    numer = rng.uniform(0.1, 2.0, (5000, 6))
    gram = np.ascontiguousarray(h @ h.T)
    points = rng.uniform(0.0, 3.0, (5000, 6))
    centers = rng.uniform(0.0, 3.0, (6, 6))
    labels = rng.integers(0, 6, 5000).astype(np.int64)
    return [
        ("fit_sse        380x24 k=6", "fit_sse", (v, w, h)),
        ("fit_grads      380x24 k=6", "fit_grads", (v, w, h)),
        ("mu_step       5000x6", "mu_step", (weights, numer, gram, 1e-12)),
        ("assign_labels 5000x6 c=6", "assign_labels", (points, centers)),
        ("update_centers 5000x6 c=6", "update_centers", (points, labels, 6)),
    ]


def best_of(module, kernel, args, repeats):
    fun = getattr(module, kernel)
    fun(*args)  # warm up
    best = float("inf")
    for _ in range(repeats):
        started = time.perf_counter()
        fun(*args)
        best = min(best, time.perf_counter() - started)
    return best


def run_micro(repeats):
    rng = np.random.default_rng(0)
    cases = make_cases(rng)
    names = [name for name, _ in IMPLEMENTATIONS]
    print(f"{'kernel':<28}" + "".join(f"{n:>12}" for n in names) +
          ("     speedup" if len(names) == 2 else ""))
    for label, kernel, args in cases:
        times = [best_of(module, kernel, [
            a.copy() if isinstance(a, np.ndarray) else a for a in args
        ], repeats) for _, module in IMPLEMENTATIONS]
        row = f"{label:<28}" + "".join(f"{t * 1e6:>10.1f}us" for t in times)
        if len(times) == 2:
            row += f"{times[0] / times[1]:>11.2f}x"
        print(row)


TRAIN_CHILD = "--train-child"


def run_train_child():
    """Time one full factorization under the backend fixed by the caller."""
    from tidalflow.backend import BACKEND_NAME
    from tidalflow.data import ODPairIndex, build_od_flow_matrix
    from tidalflow.factorization import TrainConfig, train

    sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "tests"))
    from conftest import tidal_spec
    from tidalflow.data import generate_synthetic_trips

    db, _ = generate_synthetic_trips(tidal_spec(station_count=10))
    index = ODPairIndex.from_stations(db.stations)
    values = build_od_flow_matrix(db, index).values
    config = TrainConfig(warmup_iters=100, max_iters=800, mse_tolerance=0.0)
    started = time.perf_counter()
    result = train(values, index, config)
    elapsed = time.perf_counter() - started
    print(json.dumps({"backend": BACKEND_NAME, "seconds": elapsed,
                      "iterations": result.trace[-1].iteration}))


def run_train_parent():
    print("\nfull factorization, 10 stations (90x24), 800 iterations:")
    rows = []
    for name in available_backends():
        env = dict(os.environ, TIDALFLOW_BACKEND=name)
        proc = subprocess.run([sys.executable, os.path.abspath(__file__),
                               TRAIN_CHILD], env=env, capture_output=True,
                              text=True, check=True)
        rows.append(json.loads(proc.stdout))
    for row in rows:
        print(f"  {row['backend']:<10} {row['seconds']:.3f}s "
              f"({row['iterations']} iterations)")
    if len(rows) == 2:
        ratio = rows[0]["seconds"] / rows[1]["seconds"]
        slower, faster = (rows[0], rows[1]) if ratio > 1 else (rows[1], rows[0])
        print(f"  {faster['backend']} is "
              f"{max(ratio, 1 / ratio):.2f}x faster than {slower['backend']}")


def main(argv=None):
    if argv is None:
        argv = sys.argv[1:]
    if argv == [TRAIN_CHILD]:
        run_train_child()
        return 0
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=200,
                        help="timing repetitions per kernel (default 200)")
    parser.add_argument("--skip-train", action="store_true",
                        help="only run the kernel micro-benchmarks")
    args = parser.parse_args(argv)
    print(f"available backends: {', '.join(available_backends())}\n")
    run_micro(args.repeats)
    if not args.skip_train:
        run_train_parent()
    return 0


if __name__ == "__main__":
    sys.exit(main())
