"""The two kernel backends must agree bit-for-bit, on every kernel."""

import numpy as np
import pytest

from geovuln import _kernels
from geovuln._rng import rand_u64

needs_numba = pytest.mark.skipif(not _kernels.NUMBA_AVAILABLE, reason="numba backend disabled")


def literal_partial_fy(seed, key, perm, k, pool_size):
    """Reference sampler: literal partial Fisher-Yates on a real pool."""
    pool = list(range(pool_size))
    out = []
    for t in range(k):
        r = int(rand_u64(seed, key, perm, t))
        j = t + r % (pool_size - t)
        pool[t], pool[j] = pool[j], pool[t]
        out.append(pool[t])
    return out


@needs_numba
def test_compiled_rng_matches_numpy_rng():
    rng = np.random.default_rng(0)
    for _ in range(500):
        s, a, b, c = (int(v) for v in rng.integers(0, 2**63, size=4))
        assert np.uint64(_kernels.rand_u64_compiled(s, a, b, c)) == rand_u64(s, a, b, c)


def test_stream_draws_are_uniformish():
    draws = rand_u64(1, 2, 3, np.arange(20000)) / 2.0**64
    assert abs(draws.mean() - 0.5) < 0.01
    assert abs(np.quantile(draws, 0.25) - 0.25) < 0.01


def _lisa_inputs(m=37, seed=3):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=m)
    z = (z - z.mean()) / z.std()
    n_nb = rng.integers(1, 7, size=m).astype(np.int64)
    keys = np.arange(1, m + 1, dtype=np.int64)
    lag = rng.normal(size=m) * 0.4
    return z, n_nb, keys, lag


@needs_numba
def test_lisa_backends_bit_identical():
    z, n_nb, keys, lag = _lisa_inputs()
    a = _kernels.lisa_tail_counts_numba(z, n_nb, keys, lag, 299, 17)
    b = _kernels.lisa_tail_counts_numpy(z, n_nb, keys, lag, 299, 17)
    assert np.array_equal(a, b)


def test_lisa_numpy_sampling_matches_literal_fisher_yates():
    # one unit, every permutation: samples must equal the reference sampler's
    m, k, m_perms, seed = 9, 3, 50, 23
    z = np.arange(m, dtype=np.float64)  # distinct values identify indices
    n_nb = np.zeros(m, dtype=np.int64)
    i = 4
    n_nb[i] = k
    others = np.concatenate((z[:i], z[i + 1:]))
    expected = np.zeros(m_perms)
    for perm in range(m_perms):
        sample = literal_partial_fy(seed, i + 1, perm, k, m - 1)
        expected[perm] = others[sample].sum() / k
    # recover the kernel's tail count for every possible threshold
    counts = _kernels.lisa_tail_counts_numpy(
        z, n_nb, np.arange(1, m + 1, dtype=np.int64),
        np.full(m, expected.min()), m_perms, seed)
    assert counts[i] == np.count_nonzero(expected >= expected.min()) == m_perms
    counts = _kernels.lisa_tail_counts_numpy(
        z, n_nb, np.arange(1, m + 1, dtype=np.int64),
        np.full(m, expected.max()), m_perms, seed)
    assert counts[i] == np.count_nonzero(expected >= expected.max())


def test_lisa_counts_depend_only_on_unit_coordinates():
    # dropping other units' neighbor counts must not change unit i's count
    z, n_nb, keys, lag = _lisa_inputs()
    base = _kernels.lisa_tail_counts_numpy(z, n_nb, keys, lag, 99, 5)
    solo = n_nb.copy()
    solo[1:] = 0
    again = _kernels.lisa_tail_counts_numpy(z, solo, keys, lag, 99, 5)
    assert again[0] == base[0]


def _permanova_inputs(n=30, p=5, g=3, seed=11):
    rng = np.random.default_rng(seed)
    y = rng.normal(size=(n, p))
    y -= y.mean(axis=1, keepdims=True)
    labels = rng.integers(0, g, size=n).astype(np.int64)
    labels[:g] = np.arange(g)
    sizes = np.bincount(labels, minlength=g).astype(np.int64)
    sq = np.einsum("ij,ij->i", y, y)
    return y, sq, labels, sizes


@needs_numba
def test_permanova_backends_bit_identical():
    y, sq, labels, sizes = _permanova_inputs()
    a = _kernels.permanova_null_numba(y, sq, labels, sizes, 2.5, 333, 7)
    b = _kernels.permanova_null_numpy(y, sq, labels, sizes, 2.5, 333, 7)
    assert np.array_equal(a, b)


def test_permanova_null_is_finite_for_nondegenerate_data():
    y, sq, labels, sizes = _permanova_inputs(n=12, p=3, g=2, seed=2)
    fstar = _kernels.permanova_null_numpy(y, sq, labels, sizes, 4.0, 16, 9)
    assert fstar.shape == (16,)
    assert np.isfinite(fstar).all()


@needs_numba
def test_copeland_backends_bit_identical():
    rng = np.random.default_rng(4)
    for n in (2, 3, 17, 150):
        r1 = rng.permutation(n) + 1
        r2 = rng.permutation(n) + 1
        r3 = rng.permutation(n) + 1
        a = _kernels.copeland_brute_numba(r1, r2, r3)
        b = _kernels.copeland_brute_numpy(r1, r2, r3)
        assert np.array_equal(a, b)
        assert a.sum() == 0


@needs_numba
def test_thread_count_does_not_change_results():
    z, n_nb, keys, lag = _lisa_inputs(m=50, seed=9)
    y, sq, labels, sizes = _permanova_inputs(seed=21)
    _kernels.set_threads(1)
    lisa_1 = _kernels.lisa_tail_counts_numba(z, n_nb, keys, lag, 199, 3)
    perm_1 = _kernels.permanova_null_numba(y, sq, labels, sizes, 1.0, 199, 3)
    _kernels.set_threads(2)
    lisa_2 = _kernels.lisa_tail_counts_numba(z, n_nb, keys, lag, 199, 3)
    perm_2 = _kernels.permanova_null_numba(y, sq, labels, sizes, 1.0, 199, 3)
    _kernels.set_threads(1)
    assert np.array_equal(lisa_1, lisa_2)
    assert np.array_equal(perm_1, perm_2)


def test_set_threads_clamps_and_reports():
    eff = _kernels.set_threads(10**6)
    assert eff >= 1
    if _kernels.NUMBA_AVAILABLE:
        from numba import config
        assert eff <= config.NUMBA_NUM_THREADS
    else:
        assert eff == 1
    _kernels.set_threads(1)
