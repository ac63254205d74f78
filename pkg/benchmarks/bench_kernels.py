"""Time the numba kernels against their pure-numpy twins.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Both backends are called in-process through the same dispatchers, so
``UNITTS_DISABLE_NUMBA`` does not need to be set.
"""

import argparse
import timeit

import numpy as np

from unitts import _kernels


def cases(rng):
    cost = rng.random((400, 400))
    acc = _kernels.dtw_accumulate(cost, use_numba=False)
    z = rng.standard_normal((2000, 64))
    cb = rng.standard_normal((256, 64))
    seq = rng.integers(0, 4, 200_000)
    return {
        "dtw_accumulate 400x400": lambda nb: _kernels.dtw_accumulate(cost, use_numba=nb),
        "dtw_backtrack 400x400": lambda nb: _kernels.dtw_backtrack(acc, use_numba=nb),
        "nearest 2000x256x64": lambda nb: _kernels.nearest(z, cb, use_numba=nb),
        "collapse 200k": lambda nb: _kernels.collapse(seq, use_numba=nb),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _kernels.HAVE_NUMBA:
        raise SystemExit("numba is disabled or unavailable; nothing to compare")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<26}{'numpy ms':>12}{'numba ms':>12}{'speed-up':>10}")
    for name, fn in cases(rng).items():
        fn(True)  # compile outside the timed region
        t_np = min(timeit.repeat(lambda: fn(False), number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(lambda: fn(True), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<26}{t_np:>12.2f}{t_nb:>12.2f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
