"""Compare the compiled and pure-numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints the best-of-N time per kernel and backend and the speedup of the
compiled backend. The compiled extension is optional; without it only the
numpy timings are shown.
"""

import argparse
import timeit

import numpy as np

from riskdec import kernels


def cases(rng):
    logits = rng.normal(0, 3, (20_000, 10))
    labels = rng.integers(0, 10, 20_000)
    Z = rng.standard_normal((2_000, 32))
    Z /= np.linalg.norm(Z, axis=1, keepdims=True)
    X = rng.standard_normal((12, 2))
    y = np.arange(12) % 2
    params = rng.normal(0, 3, (50_000, 3, 2))
    return {
        "softmax_xent 20000x10": lambda impl: kernels.softmax_xent(logits, labels, impl),
        "pairwise_potential 2000x32": lambda impl: kernels.pairwise_potential(Z, impl),
        "lattice_objectives 50000 pts": lambda impl: kernels.lattice_objectives(X, y, 0.2, params, impl),
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    impls = kernels.implementations()
    print(f"active backend: {kernels.BACKEND}; available: {', '.join(impls)}")
    print(f"{'kernel':<32}" + "".join(f"{name:>12}" for name in impls) + f"{'speedup':>10}")
    for label, run in cases(np.random.default_rng(0)).items():
        times = {}
        for name, impl in impls.items():
            run(impl)
            times[name] = min(timeit.repeat(lambda: run(impl), number=1, repeat=args.repeat))
        speedup = f"{times['python'] / times['cython']:.1f}x" if "cython" in times else "-"
        print(f"{label:<32}" + "".join(f"{times[n] * 1e3:>10.1f}ms" for n in impls) + f"{speedup:>10}")


if __name__ == "__main__":
    main()
