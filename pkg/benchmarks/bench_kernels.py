"""Compare the numba and pure-numpy flavours of the hot kernels.

Run with ``python3 benchmarks/bench_kernels.py``. Each kernel is timed on
the same inputs in both flavours (numba after one warm-up call so that
compilation is excluded) and the largest output difference is reported.
"""
import argparse
import timeit

import numpy as np

from prbfn import kernels
from prbfn._accel import HAVE_NUMBA
from prbfn.fas import FasParams, make_target_correlation
from prbfn.optimizer import random_unit_columns


def pgd_case(rng):
    C = make_target_correlation(FasParams(1.5, 18))
    B = random_unit_columns(4, 18, rng)

    def run(fn):
        X = B.copy()
        fn(X, C, 0.05, 1e-12, 0, 2000)
        return X
    return run


def ring_case(rng):
    phi = rng.uniform(0, 2 * np.pi, 200_000)
    return lambda fn: fn(phi, 0.37)


def lag_case(rng):
    h = rng.normal(size=(4096, 18)) + 1j * rng.normal(size=(4096, 18))
    return lambda fn: np.concatenate([np.ravel(a) for a in fn(h, 18)])


CASES = {
    "pgd_run (N=18, N_A=4, 2000 iterations)": (pgd_case, "pgd_run"),
    "ring_average (2e5 angles)": (ring_case, "ring_average"),
    "lag_sums (4096 x 18 block)": (lag_case, "lag_sums"),
}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not HAVE_NUMBA:
        print("numba is not installed; only the numpy flavour can be timed")
    print(f"{'kernel':44s} {'numpy [ms]':>11s} {'numba [ms]':>11s} {'speedup':>8s} {'max diff':>9s}")
    for label, (make, name) in CASES.items():
        run = make(np.random.default_rng(0))
        np_fn = getattr(kernels, f"{name}_numpy")
        t_np = min(timeit.repeat(lambda: run(np_fn), number=1, repeat=args.repeat))
        if HAVE_NUMBA:
            nb_fn = getattr(kernels, f"{name}_numba")
            ref = run(nb_fn)
            t_nb = min(timeit.repeat(lambda: run(nb_fn), number=1, repeat=args.repeat))
            diff = float(np.max(np.abs(np.asarray(ref) - np.asarray(run(np_fn)))))
            print(f"{label:44s} {1e3 * t_np:11.2f} {1e3 * t_nb:11.2f} {t_np / t_nb:7.1f}x {diff:9.1e}")
        else:
            print(f"{label:44s} {1e3 * t_np:11.2f} {'n/a':>11s} {'n/a':>8s} {'n/a':>9s}")


if __name__ == "__main__":
    main()
