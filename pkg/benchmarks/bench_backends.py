"""Compare the compiled and pure-Python kernel backends.

Usage: python benchmarks/bench_backends.py [--repeat N] [--json PATH]
"""
from __future__ import annotations

import argparse
import json
import timeit

import numpy as np

from taskblend import kernels
from taskblend.problems import QuadraticTaskFamily
from taskblend.trainer import OptimizerSpec, TrainConfig, train


def kernel_cases(rng: np.random.Generator) -> dict:
    t, d = 3, 10
    g = rng.standard_normal((t, d))
    gram = g @ g.T
    orders = np.array([rng.permutation(t) for _ in range(t)], dtype=np.int64)
    w = rng.dirichlet(np.ones(t))
    sign = np.sign(g.sum(axis=0))
    e = rng.random(d)
    fam = QuadraticTaskFamily.generate(t, d, 200, seed=0)
    idx = rng.integers(0, 200, size=(t, 8), dtype=np.int64)
    theta = rng.standard_normal(d)
    return {
        "softmax": lambda: kernels.softmax(w),
        "aggregate": lambda: kernels.aggregate(w, g),
        "cosine": lambda: kernels.cosine(g[0], g[1]),
        "lu_solve": lambda: kernels.lu_solve(gram + np.eye(t), w),
        "pcgrad": lambda: kernels.pcgrad(g, orders),
        "gradvac": lambda: kernels.gradvac(g, orders, np.zeros((t, t)), 0.01),
        "mgda_frank_wolfe": lambda: kernels.mgda_frank_wolfe(gram, 250, 1e-10),
        "graddrop": lambda: kernels.graddrop(g, sign, e, np.zeros(t)),
        "quad_batch": lambda: kernels.quad_batch(fam.data, idx, theta, fam.curvatures),
    }


def training_cases() -> dict:
    fam = QuadraticTaskFamily.generate(3, 10, 200, curvatures=[1.0, 1.5, 2.0], seed=7)
    opt = OptimizerSpec(lr=0.05)
    return {f"train[{kind}]": (lambda kind=kind, dist=dist: train(
        fam, TrainConfig(2000, 8, strategy=kind, distribution=dist, optimizer=opt, log_stride=100)))
        for kind, dist in (("rlw", "normal"), ("pcgrad", None), ("mgda", None))}


def best_of(fn, repeat: int, number: int) -> float:
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--json", help="also write results to this file")
    args = parser.parse_args()
    if not kernels.compiled_available():
        raise SystemExit("compiled backend not built; run: pip install -e . --no-build-isolation")

    cases = [(name, fn, 2000) for name, fn in kernel_cases(np.random.default_rng(0)).items()]
    cases += [(name, fn, 1) for name, fn in training_cases().items()]
    rows = []
    for name, fn, number in cases:
        times = {}
        for b in ("python", "compiled"):
            with kernels.use_backend(b):
                fn()  # warm up
                times[b] = best_of(fn, args.repeat, number)
        rows.append({"case": name, "python_s": times["python"], "compiled_s": times["compiled"],
                     "speedup": times["python"] / times["compiled"]})

    print(f"{'case':<20} {'python':>12} {'compiled':>12} {'speedup':>8}")
    for r in rows:
        print(f"{r['case']:<20} {r['python_s'] * 1e6:>10.1f}us {r['compiled_s'] * 1e6:>10.1f}us {r['speedup']:>7.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
