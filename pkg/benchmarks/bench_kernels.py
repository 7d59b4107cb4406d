"""Compare the numba and numpy kernel backends.

Times the sampled-entry kernels and one exact Hessian apply for a few
sample-set sizes and checks that both backends agree.

    python3 benchmarks/bench_kernels.py [--dims 50,50,50] [--rank 5,5,5]
"""

import argparse
import time

import numpy as np

from tucker_rtr import _kernels, random_tucker, use_backend
from tucker_rtr.manifold import project_to_tangent
from tucker_rtr.solver import Linearization, Objective
from tucker_rtr.tensor import SampledTensor


def best_of(fn, repeat):
    fn()  # warm up (numba compiles on first call)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def make_case(dims, ranks, m, rng):
    X = random_tucker(dims, ranks, rng)
    lin = np.sort(rng.choice(int(np.prod(dims)), m, replace=False))
    idx = np.stack(np.unravel_index(lin, dims), axis=1)
    data = SampledTensor(tuple(dims), idx, rng.standard_normal(m))
    xi = project_to_tangent(X, data.with_values(rng.standard_normal(m)))
    return X, data, xi


def cases(X, data, xi):
    rows = _kernels.gather_rows(X.factors, data.indices)
    drows = _kernels.gather_rows(xi.factor_dots, data.indices)
    vals = data.values
    d = X.order
    objective = Objective(data)
    return {
        "values": lambda: _kernels.sampled_values(rows, X.ranks, X.core),
        "tangent_values": lambda: _kernels.sampled_tangent_values(rows, drows, X.ranks, X.core,
                                                                  xi.core_dot),
        "scatter": lambda: _kernels.scatter(rows, X.ranks, list(range(1, d)), data.indices[:, 0],
                                            vals, X.dims[0]),
        "hessian_exact": lambda: Linearization(objective, X).exact(xi).core_dot,
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--dims", default="50,50,50")
    parser.add_argument("--rank", default="5,5,5")
    parser.add_argument("--samples", default="10000,20000,40000")
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    dims = tuple(int(x) for x in args.dims.split(","))
    ranks = tuple(int(x) for x in args.rank.split(","))
    rng = np.random.default_rng(0)

    print(f"dims={dims} rank={ranks}")
    print(f"{'kernel':<16}{'|Omega|':>9}{'numpy ms':>11}{'numba ms':>11}{'speedup':>9}{'max diff':>11}")
    for m in (int(x) for x in args.samples.split(",")):
        X, data, xi = make_case(dims, ranks, m, rng)
        for name in cases(X, data, xi):
            timing, results = {}, {}
            for backend in ("numpy", "numba"):
                with use_backend(backend):
                    fn = cases(X, data, xi)[name]
                    timing[backend] = best_of(fn, args.repeat)
                    results[backend] = np.asarray(fn())
            diff = np.abs(results["numpy"] - results["numba"]).max()
            print(f"{name:<16}{m:>9}{1e3 * timing['numpy']:>11.2f}{1e3 * timing['numba']:>11.2f}"
                  f"{timing['numpy'] / timing['numba']:>9.1f}{diff:>11.1e}")


if __name__ == "__main__":
    main()
