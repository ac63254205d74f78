"""Hot inner loops with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and ``UNITTS_DISABLE_NUMBA``
is unset (or ``0``).  Both paths perform the same floating point operations in
the same order, so results are bit-identical; ``tests/test_kernels.py`` checks
that, and ``benchmarks/bench_kernels.py`` times them against each other.
"""

from __future__ import annotations

import os

import numpy as np

_DISABLED = os.environ.get("UNITTS_DISABLE_NUMBA", "0").lower() not in ("", "0", "false", "no")

try:
    if _DISABLED:
        raise ImportError("disabled by UNITTS_DISABLE_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via the env flag in CI
    HAVE_NUMBA = False


# ---------------------------------------------------------------------------
# numpy reference implementations
# ---------------------------------------------------------------------------


def _collapse_numpy(seq: np.ndarray) -> np.ndarray:
    if seq.shape[0] == 0:
        return seq.copy()
    keep = np.empty(seq.shape[0], dtype=np.bool_)
    keep[0] = True
    np.not_equal(seq[1:], seq[:-1], out=keep[1:])
    return seq[keep]


def _nearest_numpy(z: np.ndarray, codebook: np.ndarray) -> np.ndarray:
    # explicit differences (not the |z|^2 - 2ze + |e|^2 expansion) so exact
    # ties stay exact and the lowest index wins
    out = np.empty(z.shape[0], dtype=np.int64)
    for i in range(z.shape[0]):
        diff = codebook - z[i]
        d = np.zeros(codebook.shape[0])
        for k in range(codebook.shape[1]):
            d += diff[:, k] * diff[:, k]
        out[i] = int(np.argmin(d))
    return out


def _dtw_accumulate_numpy(cost: np.ndarray) -> np.ndarray:
    n, m = cost.shape
    acc = np.full((n, m), np.inf)
    acc[0, 0] = cost[0, 0]
    for j in range(1, m):
        acc[0, j] = cost[0, j] + acc[0, j - 1]
    for i in range(1, n):
        acc[i, 0] = cost[i, 0] + acc[i - 1, 0]
    # anti-diagonal wavefront: every cell on diagonal s depends only on s-1, s-2
    for s in range(2, n + m - 1):
        i = np.arange(max(1, s - m + 1), min(n - 1, s - 1) + 1)
        if i.size == 0:
            continue
        j = s - i
        best = np.minimum(np.minimum(acc[i - 1, j - 1], acc[i - 1, j]), acc[i, j - 1])
        acc[i, j] = cost[i, j] + best
    return acc


def _dtw_backtrack_numpy(acc: np.ndarray) -> np.ndarray:
    i, j = acc.shape[0] - 1, acc.shape[1] - 1
    path = [(i, j)]
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            diag, up, left = acc[i - 1, j - 1], acc[i - 1, j], acc[i, j - 1]
            if diag <= up and diag <= left:
                i, j = i - 1, j - 1
            elif up <= left:
                i -= 1
            else:
                j -= 1
        path.append((i, j))
    return np.array(path[::-1], dtype=np.int64)


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _collapse_numba(seq):
        n = seq.shape[0]
        out = np.empty_like(seq)
        if n == 0:
            return out
        out[0] = seq[0]
        k = 1
        for i in range(1, n):
            if seq[i] != seq[i - 1]:
                out[k] = seq[i]
                k += 1
        return out[:k].copy()

    @njit(cache=True)
    def _nearest_numba(z, codebook):
        n, dim = z.shape
        c = codebook.shape[0]
        out = np.empty(n, dtype=np.int64)
        for i in range(n):
            best = np.inf
            best_j = 0
            for j in range(c):
                d = 0.0
                for k in range(dim):
                    diff = codebook[j, k] - z[i, k]
                    d += diff * diff
                if d < best:
                    best = d
                    best_j = j
            out[i] = best_j
        return out

    @njit(cache=True)
    def _dtw_accumulate_numba(cost):
        n, m = cost.shape
        acc = np.full((n, m), np.inf)
        acc[0, 0] = cost[0, 0]
        for j in range(1, m):
            acc[0, j] = cost[0, j] + acc[0, j - 1]
        for i in range(1, n):
            acc[i, 0] = cost[i, 0] + acc[i - 1, 0]
            for j in range(1, m):
                best = acc[i - 1, j - 1]
                if acc[i - 1, j] < best:
                    best = acc[i - 1, j]
                if acc[i, j - 1] < best:
                    best = acc[i, j - 1]
                acc[i, j] = cost[i, j] + best
        return acc

    @njit(cache=True)
    def _dtw_backtrack_numba(acc):
        i = acc.shape[0] - 1
        j = acc.shape[1] - 1
        buf = np.empty((acc.shape[0] + acc.shape[1], 2), dtype=np.int64)
        k = 0
        buf[k, 0] = i
        buf[k, 1] = j
        while i > 0 or j > 0:
            if i == 0:
                j -= 1
            elif j == 0:
                i -= 1
            else:
                diag = acc[i - 1, j - 1]
                up = acc[i - 1, j]
                left = acc[i, j - 1]
                if diag <= up and diag <= left:
                    i -= 1
                    j -= 1
                elif up <= left:
                    i -= 1
                else:
                    j -= 1
            k += 1
            buf[k, 0] = i
            buf[k, 1] = j
        return buf[: k + 1][::-1].copy()


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def backend() -> str:
    return "numba" if HAVE_NUMBA else "numpy"


def collapse(seq: np.ndarray, use_numba: bool | None = None) -> np.ndarray:
    seq = np.ascontiguousarray(seq, dtype=np.int64)
    if _pick(use_numba):
        return _collapse_numba(seq)
    return _collapse_numpy(seq)


def nearest(z: np.ndarray, codebook: np.ndarray, use_numba: bool | None = None) -> np.ndarray:
    z = np.ascontiguousarray(z, dtype=np.float64)
    codebook = np.ascontiguousarray(codebook, dtype=np.float64)
    if _pick(use_numba):
        return _nearest_numba(z, codebook)
    return _nearest_numpy(z, codebook)


def dtw_accumulate(cost: np.ndarray, use_numba: bool | None = None) -> np.ndarray:
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    if _pick(use_numba):
        return _dtw_accumulate_numba(cost)
    return _dtw_accumulate_numpy(cost)


def dtw_backtrack(acc: np.ndarray, use_numba: bool | None = None) -> np.ndarray:
    acc = np.ascontiguousarray(acc, dtype=np.float64)
    if _pick(use_numba):
        return _dtw_backtrack_numba(acc)
    return _dtw_backtrack_numpy(acc)


def _pick(use_numba: bool | None) -> bool:
    if use_numba is None:
        return HAVE_NUMBA
    if use_numba and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but unavailable")
    return use_numba
