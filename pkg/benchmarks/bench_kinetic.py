"""Compiled vs numpy angular-momentum sums.

Usage: python benchmarks/bench_kinetic.py [--nodes N] [--Q Q] [--repeat R]

Times both backends on the same random inputs, checks they agree and
prints the speed-up.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from charinit.kinetic import _moments_py

try:
    from charinit.kinetic import _moments as _compiled
except ImportError:     # extension not built
    _compiled = None


def make_inputs(n_nodes: int, Q: int, k: int = 2, seed: int = 0):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n_nodes, k, k)) * 0.1
    metric = np.einsum("iab,icb->iac", A, A) + np.eye(k)
    spatial = rng.uniform(0.0, 1.0, n_nodes)
    spatial[rng.uniform(size=n_nodes) < 0.3] = 0.0
    p = rng.uniform(-1.0, 1.0, size=(Q**k, k))
    w = rng.uniform(0.0, 1.0, Q**k)
    return metric, spatial, p, w, 1.0


def best_time(fn, args, repeat: int) -> float:
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes", type=int, default=65 * 16)
    ap.add_argument("--Q", type=int, default=24)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    inputs = make_inputs(args.nodes, args.Q)
    t_py = best_time(_moments_py.angular_sums, inputs, args.repeat)
    print(f"nodes={args.nodes} Q={args.Q}^2")
    print(f"numpy     {t_py * 1e3:9.2f} ms")
    if _compiled is None:
        print("compiled  (extension not built)")
        return
    t_c = best_time(_compiled.angular_sums, inputs, args.repeat)
    ref = _moments_py.angular_sums(*inputs)
    got = _compiled.angular_sums(*inputs)
    gap = max(float(np.max(np.abs(a - b)) / (1.0 + np.max(np.abs(a)))) for a, b in zip(ref, got))
    print(f"compiled  {t_c * 1e3:9.2f} ms   speed-up x{t_py / t_c:.1f}   max rel gap {gap:.1e}")


if __name__ == "__main__":
    main()
