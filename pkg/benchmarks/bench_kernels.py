"""Compare the compiled and pure-Python kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each kernel is run on the same inputs under both backends; the table shows
the best-of-``repeat`` wall time and the max abs difference of the outputs.
"""

import argparse
import timeit

import numpy as np

from fedleak import kernels
from fedleak.models import ModelSpec, init_params

CASES = [
    ("logistic p=5 B=8", ModelSpec("logistic-regression", 5), 8),
    ("linear p=20 B=32", ModelSpec("linear-regression", 20), 32),
    ("mlp1 p=2 h=4 B=9", ModelSpec("mlp1", 2, hidden_dim=4), 9),
    ("mlp1 p=8 h=16 o=3 B=16", ModelSpec("mlp1", 8, hidden_dim=16, output_dim=3), 16),
]


def _labels(spec, rng, B):
    if spec.is_classifier:
        return rng.integers(0, spec.num_classes, B).astype(float)
    return rng.standard_normal(B)


def _workloads(spec, theta, X, y):
    return {
        "mean_grad": lambda impl: kernels.mean_grad(spec, theta, X, y, impl=impl),
        "local_descent E=5": lambda impl: kernels.local_descent(spec, theta, X, y, 0.1, 5, impl=impl),
        "update_jacobian_fd E=1": lambda impl: kernels.update_jacobian_fd(spec, theta, X, y, 0.1, 1, 1e-6, impl=impl),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    impls = kernels.backends()
    if "cython" not in impls:
        print("compiled backend not built; only the python fallback is available")
    names = sorted(impls)
    print(f"{'case':26s} {'kernel':24s} " + " ".join(f"{n:>12s}" for n in names) + f" {'speedup':>8s} {'max|diff|':>10s}")
    rng = np.random.default_rng(0)
    for label, spec, B in CASES:
        theta = init_params(spec, 1)
        X = rng.uniform(size=(B, spec.input_dim))
        y = _labels(spec, rng, B)
        for kname, fn in _workloads(spec, theta, X, y).items():
            times, outs = {}, {}
            for n in names:
                impl = impls[n]
                outs[n] = fn(impl)
                t = timeit.Timer(lambda: fn(impl))
                number, _ = t.autorange()
                times[n] = min(t.repeat(args.repeat, number)) / number
            speed = times["python"] / times["cython"] if "cython" in times else float("nan")
            diff = max(float(np.max(np.abs(outs[n] - outs["python"]))) for n in names)
            cols = " ".join(f"{times[n] * 1e6:10.1f}us" for n in names)
            print(f"{label:26s} {kname:24s} {cols} {speed:7.1f}x {diff:10.1e}")


if __name__ == "__main__":
    main()
