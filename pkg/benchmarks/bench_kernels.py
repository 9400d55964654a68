"""Compare the numba and pure-numpy linear-algebra kernels.

    python benchmarks/bench_kernels.py [--batch 2000] [--n 5] [--repeat 5]

Both backends run on the same stacks; the script checks their outputs are
bit-identical and prints the best-of-``repeat`` wall time for each kernel.
Numba compile time is excluded (one warm-up call per kernel).
"""
import argparse
import time

import numpy as np

from eigenlab import ensembles, kernels
from eigenlab._accel import HAVE_NUMBA
from eigenlab.linalg import CONVERGENCE_RTOL, MAX_SWEEPS, SINGULAR_RTOL


def best_time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b), equal_nan=True)


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--batch", type=int, default=2000)
    ap.add_argument("--n", type=int, default=5)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if not HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    cfg = ensembles.EnsembleConfig("gaussian", args.n, seed=args.seed)
    sym = ensembles.sample_batch(cfg, range(args.batch))
    gen = ensembles.sample_batch(ensembles.EnsembleConfig("wigner_uniform_general", args.n, seed=args.seed),
                                 range(args.batch))
    norms = np.abs(sym).sum(axis=(1, 2))
    d, vecs, _ = kernels.NUMPY_KERNELS["jacobi"](sym, CONVERGENCE_RTOL * norms, MAX_SWEEPS)
    cases = {
        "jacobi": (sym, CONVERGENCE_RTOL * norms, MAX_SWEEPS),
        "gauss_jordan": (gen, SINGULAR_RTOL * np.abs(gen).sum(axis=(1, 2))),
        "gram": (gen,),
        "reassemble": (d, vecs),
    }
    print(f"batch={args.batch} n={args.n} repeat={args.repeat}")
    print(f"{'kernel':<14}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}  identical")
    for name, call_args in cases.items():
        nb_fn = kernels.NUMBA_KERNELS[name]
        np_fn = kernels.NUMPY_KERNELS[name]
        nb_fn(*call_args)
        t_nb, out_nb = best_time(lambda: nb_fn(*call_args), args.repeat)
        t_np, out_np = best_time(lambda: np_fn(*call_args), args.repeat)
        print(f"{name:<14}{t_nb * 1e3:>10.2f}{t_np * 1e3:>10.2f}{t_np / t_nb:>8.1f}x  {same(out_nb, out_np)}")


if __name__ == "__main__":
    main()
