"""Time the compiled kernels against the numpy fallback on sweep-sized inputs.

Usage: python3 benchmarks/bench_kernels.py [--n 12 16] [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from mivlue import _pykernels, kernels
from mivlue.design import bernoulli_design
from mivlue.graph import generate

try:
    from mivlue import _ckernels
except ImportError:
    _ckernels = None


def _parts(result):
    return result if isinstance(result, tuple) else (result,)


def bench(n, repeat, seed=0):
    g = generate("erdos_renyi", n, seed=seed, p=0.5)
    d = bernoulli_design(n, exclude_trivial=True, cap=2**13, seed=seed)
    D = d.degrees(g)
    K = max(g.max_degree, 0)
    vals = np.random.default_rng(seed).normal(size=d.support.shape)
    cases = {
        "cell_sums": lambda impl: kernels.cell_sums(d.support, D, d.pmf, vals, K, impl=impl),
        "stratified_weights": lambda impl: kernels.stratified_weights(d.support, D, K, impl=impl),
    }
    impls = {"numpy": _pykernels}
    if _ckernels is not None:
        impls["cython"] = _ckernels
    rows = []
    for name, fn in cases.items():
        ref = fn(_pykernels)
        times = {}
        for label, impl in impls.items():
            out = fn(impl)
            for a, b in zip(_parts(ref), _parts(out)):
                np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)
            times[label] = min(timeit.repeat(lambda: fn(impl), number=1, repeat=repeat))
        rows.append((name, n, d.size, times))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, nargs="+", default=[10, 12, 14])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"default backend: {kernels.BACKEND}")
    print(f"{'kernel':<20}{'n':>4}{'support':>9}{'numpy ms':>11}{'cython ms':>11}{'speedup':>9}")
    for n in args.n:
        for name, nn, m, t in bench(n, args.repeat):
            cy = t.get("cython")
            cy_s = f"{1e3 * cy:11.2f}" if cy else f"{'n/a':>11}"
            sp = f"{t['numpy'] / cy:9.1f}" if cy else f"{'':>9}"
            print(f"{name:<20}{nn:>4}{m:>9}{1e3 * t['numpy']:11.2f}{cy_s}{sp}")


if __name__ == "__main__":
    main()
