import numpy as np
import pytest

from unitts import _kernels

numba_only = pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba unavailable")


@numba_only
@pytest.mark.parametrize("seed", range(5))
def test_dtw_backends_bit_identical(seed):
    rng = np.random.default_rng(seed)
    cost = rng.random((rng.integers(1, 40), rng.integers(1, 40)))
    a = _kernels.dtw_accumulate(cost, use_numba=True)
    b = _kernels.dtw_accumulate(cost, use_numba=False)
    assert np.array_equal(a, b)
    assert np.array_equal(_kernels.dtw_backtrack(a, use_numba=True), _kernels.dtw_backtrack(b, use_numba=False))


@numba_only
@pytest.mark.parametrize("seed", range(5))
def test_nearest_backends_agree(seed):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((50, 6))
    cb = rng.standard_normal((17, 6))
    assert np.array_equal(_kernels.nearest(z, cb, use_numba=True), _kernels.nearest(z, cb, use_numba=False))


@numba_only
def test_collapse_backends_agree():
    rng = np.random.default_rng(0)
    for _ in range(50):
        s = rng.integers(0, 3, size=rng.integers(0, 30))
        assert np.array_equal(_kernels.collapse(s, use_numba=True), _kernels.collapse(s, use_numba=False))


def test_backend_name():
    assert _kernels.backend() in ("numba", "numpy")


def test_dtw_single_row():
    cost = np.array([[1.0, 2.0, 3.0]])
    acc = _kernels.dtw_accumulate(cost)
    assert acc[0, -1] == 6.0
    assert _kernels.dtw_backtrack(acc).tolist() == [[0, 0], [0, 1], [0, 2]]
