"""Permutation and pairwise-competition kernels.

Three inner loops dominate the pipeline's runtime: the conditional
permutation test behind the local-association maps, the label-shuffle null of
the compositional pseudo-F test, and the all-pairs Copeland competitions.
Each kernel exists twice:

* a ``numba`` ``@njit(parallel=True)`` version (default when numba imports), and
* a pure-numpy version, selected by setting ``GEOVULN_NO_NUMBA=1`` (or used
  automatically when numba is not installed).

Both versions consume the same counter-based random streams (see ``_rng``)
and accumulate floating-point sums in the same order, so their outputs are
bit-identical; ``tests/test_kernels.py`` asserts this.  Parallel scheduling
never affects results because every (unit, permutation) cell is a pure
function of the seed and its coordinates, and each worker writes only its own
output slot.

``benchmarks/bench_kernels.py`` times the two versions side by side.
"""

import os

import numpy as np

from ._rng import FOLD_A, FOLD_B, GAMMA, U64, rand_u64

_ENV_FLAG = "GEOVULN_NO_NUMBA"


def _env_disabled():
    return os.environ.get(_ENV_FLAG, "").strip().lower() not in ("", "0", "false")


NUMBA_AVAILABLE = False
if not _env_disabled():
    try:
        from numba import njit, prange, set_num_threads
        from numba import config as _numba_config

        NUMBA_AVAILABLE = True
    except ImportError:  # pragma: no cover - exercised via the env flag instead
        pass


def backend():
    """Name of the active kernel backend: 'numba' or 'numpy'."""
    return "numba" if NUMBA_AVAILABLE else "numpy"


def set_threads(requested):
    """Set the worker-pool size; returns the effective thread count.

    Requests beyond the pool numba was initialized with are clamped.  The
    numpy backend is single-threaded and always reports 1.
    """
    if not NUMBA_AVAILABLE:
        return 1
    if requested is None or requested <= 0:
        return _numba_config.NUMBA_NUM_THREADS
    effective = min(int(requested), _numba_config.NUMBA_NUM_THREADS)
    set_num_threads(effective)
    return effective


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def _vfy_lookup(pos, val, n_slots, query):
    """Value of the virtual Fisher-Yates pool at `query`, latest write wins."""
    out = query.copy()
    unresolved = np.ones(query.shape[0], dtype=bool)
    for s in range(n_slots - 1, -1, -1):
        hit = unresolved & (pos[s] == query)
        if hit.any():
            out[hit] = val[s][hit]
            unresolved &= ~hit
    return out


def lisa_tail_counts_numpy(z, n_neighbors, unit_keys, lag_obs, m_perms, seed):
    """Conditional-permutation tail counts for every unit, numpy path.

    For unit i, each permutation resamples n_i values without replacement
    from the other n-1 entries of ``z`` (partial Fisher-Yates over an index
    pool, one counter-based stream per (unit, permutation)) and recomputes
    the row-standardized lag as their mean.  Returns, per unit, the number
    of permuted lags at least as extreme as ``lag_obs`` on the side of the
    observed lag's sign.
    """
    m = z.shape[0]
    pool_size = m - 1
    counts = np.zeros(m, dtype=np.int64)
    perm_idx = np.arange(m_perms, dtype=U64)
    for i in range(m):
        k = int(n_neighbors[i])
        if k == 0:
            continue
        others = np.concatenate((z[:i], z[i + 1:]))
        acc = np.zeros(m_perms, dtype=np.float64)
        # Swap slots are written in lockstep across permutations: step t
        # records (position j, old value) and (position t, old value).
        pos = np.full((2 * k, m_perms), pool_size, dtype=np.int64)
        val = np.zeros((2 * k, m_perms), dtype=np.int64)
        t_query = np.empty(m_perms, dtype=np.int64)
        for t in range(k):
            r = rand_u64(seed, unit_keys[i], perm_idx, t)
            j = t + (r % U64(pool_size - t)).astype(np.int64)
            a_j = _vfy_lookup(pos, val, 2 * t, j)
            t_query.fill(t)
            a_t = _vfy_lookup(pos, val, 2 * t, t_query)
            pos[2 * t] = j
            val[2 * t] = a_t
            pos[2 * t + 1] = t
            val[2 * t + 1] = a_j
            acc += others[a_j]
        lag = acc / k
        if lag_obs[i] >= 0.0:
            counts[i] = int(np.count_nonzero(lag >= lag_obs[i]))
        else:
            counts[i] = int(np.count_nonzero(lag <= lag_obs[i]))
    return counts


def _pseudo_f(sst, ssw, n, g):
    if ssw == 0.0:
        return float("inf") if sst > 0.0 else 0.0
    return ((sst - ssw) / (g - 1)) / (ssw / (n - g))


def permanova_null_numpy(y, sq, labels, group_sizes, sst, m_perms, seed):
    """Null pseudo-F values under wholesale label shuffles, numpy path.

    The within sum of squares uses the group-sum identity
    (1/n_s) sum_{i<j in s} d2_ij = q_s - |S_s|^2 / n_s, so each permutation
    costs O(n*p) instead of O(n^2).
    """
    n, p = y.shape
    g = group_sizes.shape[0]
    labs = np.tile(labels, (m_perms, 1))
    perm_idx = np.arange(m_perms, dtype=U64)
    rows = np.arange(m_perms)
    for t in range(n - 1, 0, -1):
        j = (rand_u64(seed, 0, perm_idx, t) % U64(t + 1)).astype(np.int64)
        tmp = labs[rows, t].copy()
        labs[rows, t] = labs[rows, j]
        labs[rows, j] = tmp
    fstar = np.empty(m_perms, dtype=np.float64)
    for perm in range(m_perms):
        lab = labs[perm]
        q = np.bincount(lab, weights=sq, minlength=g)
        s_mat = np.empty((g, p), dtype=np.float64)
        for d in range(p):
            s_mat[:, d] = np.bincount(lab, weights=y[:, d], minlength=g)
        ssw = 0.0
        for s in range(g):
            norm2 = 0.0
            for d in range(p):
                norm2 += s_mat[s, d] * s_mat[s, d]
            ssw += float(q[s]) - norm2 / float(group_sizes[s])
        fstar[perm] = _pseudo_f(sst, ssw, n, g)
    return fstar


def copeland_brute_numpy(r1, r2, r3, block=512):
    """All-pairs Copeland scores by blocked broadcasting, numpy path."""
    n = r1.shape[0]
    out = np.empty(n, dtype=np.int64)
    for lo in range(0, n, block):
        hi = min(lo + block, n)
        cnt = (
            (r1[lo:hi, None] > r1[None, :]).astype(np.int8)
            + (r2[lo:hi, None] > r2[None, :])
            + (r3[lo:hi, None] > r3[None, :])
        )
        s = np.where(cnt >= 2, np.int64(1), np.int64(-1))
        s[np.arange(hi - lo), np.arange(lo, hi)] = 0
        out[lo:hi] = s.sum(axis=1)
    return out


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if NUMBA_AVAILABLE:
    _GAMMA_U = np.uint64(GAMMA)
    _MIX1_U = np.uint64(0xBF58476D1CE4E5B9)
    _MIX2_U = np.uint64(0x94D049BB133111EB)
    _FOLD_A_U = np.uint64(FOLD_A)
    _FOLD_B_U = np.uint64(FOLD_B)

    @njit(inline="always", cache=True)
    def _mix64_nb(z):
        z = (z ^ (z >> np.uint64(30))) * _MIX1_U
        z = (z ^ (z >> np.uint64(27))) * _MIX2_U
        return z ^ (z >> np.uint64(31))

    @njit(inline="always", cache=True)
    def _rand_u64_nb(seed, a, b, c):
        z = seed ^ (a * _FOLD_A_U)
        z = _mix64_nb(z + _GAMMA_U)
        z = z ^ (b * _FOLD_B_U)
        z = _mix64_nb(z + _GAMMA_U)
        z = z ^ (c * _GAMMA_U)
        return _mix64_nb(z)

    def rand_u64_compiled(seed, a, b, c):
        """Scalar draw from the compiled stream (test hook)."""
        return _rand_u64_nb(np.uint64(seed), np.uint64(a), np.uint64(b), np.uint64(c))

    @njit(inline="always", cache=True)
    def _vfy_lookup_nb(pos, val, n_slots, query):
        for s in range(n_slots - 1, -1, -1):
            if pos[s] == query:
                return val[s]
        return query

    @njit(parallel=True, cache=True)
    def _lisa_counts_nb(z, n_neighbors, unit_keys, lag_obs, m_perms, seed):
        m = z.shape[0]
        pool_size = m - 1
        counts = np.zeros(m, dtype=np.int64)
        seed_u = np.uint64(seed)
        for i in prange(m):
            k = n_neighbors[i]
            if k == 0:
                continue
            key_u = np.uint64(unit_keys[i])
            obs = lag_obs[i]
            pos = np.empty(2 * k, dtype=np.int64)
            val = np.empty(2 * k, dtype=np.int64)
            hits = 0
            for perm in range(m_perms):
                perm_u = np.uint64(perm)
                acc = 0.0
                n_slots = 0
                for t in range(k):
                    r = _rand_u64_nb(seed_u, key_u, perm_u, np.uint64(t))
                    j = t + np.int64(r % np.uint64(pool_size - t))
                    a_j = _vfy_lookup_nb(pos, val, n_slots, j)
                    a_t = _vfy_lookup_nb(pos, val, n_slots, t)
                    pos[n_slots] = j
                    val[n_slots] = a_t
                    n_slots += 1
                    pos[n_slots] = t
                    val[n_slots] = a_j
                    n_slots += 1
                    idx = a_j if a_j < i else a_j + 1
                    acc += z[idx]
                lag = acc / k
                if obs >= 0.0:
                    if lag >= obs:
                        hits += 1
                else:
                    if lag <= obs:
                        hits += 1
            counts[i] = hits
        return counts

    def lisa_tail_counts_numba(z, n_neighbors, unit_keys, lag_obs, m_perms, seed):
        return _lisa_counts_nb(
            np.ascontiguousarray(z, dtype=np.float64),
            np.ascontiguousarray(n_neighbors, dtype=np.int64),
            np.ascontiguousarray(unit_keys, dtype=np.int64),
            np.ascontiguousarray(lag_obs, dtype=np.float64),
            int(m_perms),
            int(seed),
        )

    @njit(parallel=True, cache=True)
    def _permanova_null_nb(y, sq, labels, group_sizes, sst, m_perms, seed):
        n, p = y.shape
        g = group_sizes.shape[0]
        fstar = np.empty(m_perms, dtype=np.float64)
        seed_u = np.uint64(seed)
        zero_u = np.uint64(0)
        for perm in prange(m_perms):
            perm_u = np.uint64(perm)
            lab = labels.copy()
            for t in range(n - 1, 0, -1):
                r = _rand_u64_nb(seed_u, zero_u, perm_u, np.uint64(t))
                j = np.int64(r % np.uint64(t + 1))
                tmp = lab[t]
                lab[t] = lab[j]
                lab[j] = tmp
            q = np.zeros(g, dtype=np.float64)
            s_mat = np.zeros((g, p), dtype=np.float64)
            for d in range(p):
                for i in range(n):
                    s_mat[lab[i], d] += y[i, d]
            for i in range(n):
                q[lab[i]] += sq[i]
            ssw = 0.0
            for s in range(g):
                norm2 = 0.0
                for d in range(p):
                    norm2 += s_mat[s, d] * s_mat[s, d]
                ssw += q[s] - norm2 / group_sizes[s]
            if ssw == 0.0:
                fstar[perm] = np.inf if sst > 0.0 else 0.0
            else:
                fstar[perm] = ((sst - ssw) / (g - 1)) / (ssw / (n - g))
        return fstar

    def permanova_null_numba(y, sq, labels, group_sizes, sst, m_perms, seed):
        return _permanova_null_nb(
            np.ascontiguousarray(y, dtype=np.float64),
            np.ascontiguousarray(sq, dtype=np.float64),
            np.ascontiguousarray(labels, dtype=np.int64),
            np.ascontiguousarray(group_sizes, dtype=np.int64),
            float(sst),
            int(m_perms),
            int(seed),
        )

    @njit(parallel=True, cache=True)
    def _copeland_brute_nb(r1, r2, r3):
        n = r1.shape[0]
        out = np.empty(n, dtype=np.int64)
        for i in prange(n):
            a = r1[i]
            b = r2[i]
            c = r3[i]
            w = 0
            for k in range(n):
                if k == i:
                    continue
                cnt = 0
                if a > r1[k]:
                    cnt += 1
                if b > r2[k]:
                    cnt += 1
                if c > r3[k]:
                    cnt += 1
                if cnt >= 2:
                    w += 1
                else:
                    w -= 1
            out[i] = w
        return out

    def copeland_brute_numba(r1, r2, r3):
        return _copeland_brute_nb(
            np.ascontiguousarray(r1, dtype=np.int64),
            np.ascontiguousarray(r2, dtype=np.int64),
            np.ascontiguousarray(r3, dtype=np.int64),
        )

else:
    rand_u64_compiled = None
    lisa_tail_counts_numba = None
    permanova_null_numba = None
    copeland_brute_numba = None


# ---------------------------------------------------------------------------
# dispatchers
# ---------------------------------------------------------------------------

def lisa_tail_counts(z, n_neighbors, unit_keys, lag_obs, m_perms, seed):
    args = (
        np.asarray(z, dtype=np.float64),
        np.asarray(n_neighbors, dtype=np.int64),
        np.asarray(unit_keys, dtype=np.int64),
        np.asarray(lag_obs, dtype=np.float64),
        int(m_perms),
        int(seed),
    )
    if NUMBA_AVAILABLE:
        return lisa_tail_counts_numba(*args)
    return lisa_tail_counts_numpy(*args)


def permanova_null(y, sq, labels, group_sizes, sst, m_perms, seed):
    args = (
        np.asarray(y, dtype=np.float64),
        np.asarray(sq, dtype=np.float64),
        np.asarray(labels, dtype=np.int64),
        np.asarray(group_sizes, dtype=np.int64),
        float(sst),
        int(m_perms),
        int(seed),
    )
    if NUMBA_AVAILABLE:
        return permanova_null_numba(*args)
    return permanova_null_numpy(*args)


def copeland_brute(r1, r2, r3):
    r1 = np.asarray(r1, dtype=np.int64)
    r2 = np.asarray(r2, dtype=np.int64)
    r3 = np.asarray(r3, dtype=np.int64)
    if NUMBA_AVAILABLE:
        return copeland_brute_numba(r1, r2, r3)
    return copeland_brute_numpy(r1, r2, r3)
