"""Time the compiled GRU recursion against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Shapes cover the per-frame training batches used by the imputer
(T=192 samples, hidden sizes 32 and 64). Both backends get the same
inputs; the largest absolute difference is reported alongside timings.
"""
import argparse
import timeit

import numpy as np

from limbchan import _kernels_py

try:
    from limbchan import _kernels
except ImportError:
    _kernels = None

SHAPES = [(192, 1, 32), (192, 32, 32), (192, 32, 64), (192, 64, 64)]


def inputs(T, B, H, seed=0):
    rng = np.random.default_rng(seed)
    xu = rng.normal(scale=0.5, size=(T, B, 3 * H))
    w = rng.normal(scale=1 / np.sqrt(H), size=(H, 3 * H))
    s0 = np.zeros((B, H))
    d = rng.normal(size=(T, B, H))
    return xu, w, s0, d


def step(mod, xu, w, s0, d):
    fwd = mod.gru_forward(xu, w, s0)
    return fwd, mod.gru_backward(d, w, s0, *fwd)


def best_of(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _kernels is None:
        print("compiled kernels not built; run `pip install -e . --no-build-isolation` first")
        return
    print(f"{'T':>4} {'B':>4} {'H':>4} {'numpy ms':>10} {'cython ms':>10} {'speedup':>8} {'max diff':>10}")
    for T, B, H in SHAPES:
        args_ = inputs(T, B, H)
        ref = step(_kernels_py, *args_)
        got = step(_kernels, *args_)
        diff = max(np.abs(a - b).max() for a, b in zip(ref[0] + ref[1], got[0] + got[1]))
        t_py = best_of(lambda: step(_kernels_py, *args_), args.repeat)
        t_cy = best_of(lambda: step(_kernels, *args_), args.repeat)
        print(f"{T:4d} {B:4d} {H:4d} {1e3 * t_py:10.2f} {1e3 * t_cy:10.2f} {t_py / t_cy:8.1f} {diff:10.1e}")


if __name__ == "__main__":
    main()
