"""Time the compiled and pure-Python GP kernels on calibration-sized batches.

Usage: python3 benchmarks/bench_backends.py [--repeats 20] [--csv out.csv]
"""

import argparse
import csv
import sys
import timeit

import numpy as np

from ronchicalib import kernels

# (candidates, observations, latent dim): E-step shapes early, mid and late in a run
SHAPES = [(128, 5, 3), (128, 15, 3), (128, 30, 3), (512, 30, 3)]


def _inputs(B, M, ell, rng):
    X = rng.uniform(-200, 200, size=(B, M, 3))
    inv = np.full(3, 1.0 / 180.0**2)
    K = kernels.sym_se_gram(X, X, 1.0, inv)
    D = rng.standard_normal((B, M, ell))
    noise = np.full(ell, 4e-4)
    return X, inv, K, D, noise


def run(repeats=20, seed=0):
    rng = np.random.default_rng(seed)
    rows = []
    for B, M, ell in SHAPES:
        X, inv, K, D, noise = _inputs(B, M, ell, rng)
        for name in kernels.available_backends():
            kernels.use_backend(name)
            t_gram = min(timeit.repeat(lambda: kernels.sym_se_gram(X, X, 1.0, inv), number=1, repeat=repeats))
            t_fact = min(timeit.repeat(lambda: kernels.factor_solve(K, D, noise, 1.0), number=1, repeat=repeats))
            rows.append({"backend": name, "candidates": B, "observations": M,
                         "gram_ms": 1e3 * t_gram, "factor_ms": 1e3 * t_fact})
    return rows


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--csv")
    args = p.parse_args(argv)
    prev = kernels.BACKEND
    try:
        rows = run(args.repeats)
    finally:
        kernels.use_backend(prev)
    if "compiled" not in kernels.available_backends():
        print("compiled extension not built; timing the Python backend only", file=sys.stderr)
    print(f"{'backend':9s} {'N':>5s} {'T':>4s} {'gram ms':>9s} {'factor ms':>10s}")
    for r in rows:
        print(f"{r['backend']:9s} {r['candidates']:5d} {r['observations']:4d} "
              f"{r['gram_ms']:9.3f} {r['factor_ms']:10.3f}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(rows)


if __name__ == "__main__":
    main()
