"""Benchmark the compiled permutation kernels against the numpy fallbacks.

The two code paths produce bit-identical outputs (asserted here on every
run); this script measures the speed gap at a configurable scale.

  python benchmarks/bench_kernels.py                 # desk scale
  python benchmarks/bench_kernels.py --units 8000 --permutations 999

The numpy fallback of the conditional-permutation kernel is the slow one by
design (it exists for environments without a working numba); expect orders
of magnitude between the paths at full scale.
"""

import argparse
import time

import numpy as np

from geovuln import _kernels


def _time(fn, *args, repeats=3):
    best = float("inf")
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return out, best


def bench_lisa(n_units, m_perms, seed):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=n_units)
    z = (z - z.mean()) / z.std()
    n_nb = rng.integers(2, 9, size=n_units).astype(np.int64)
    keys = np.arange(1, n_units + 1, dtype=np.int64)
    lag = rng.normal(size=n_units) * 0.4
    args = (z, n_nb, keys, lag, m_perms, 42)
    rows = []
    if _kernels.NUMBA_AVAILABLE:
        _kernels.lisa_tail_counts_numba(*args)  # JIT warm-up
        got_nb, t_nb = _time(_kernels.lisa_tail_counts_numba, *args)
        rows.append(("conditional permutation", "numba", t_nb))
    got_np, t_np = _time(_kernels.lisa_tail_counts_numpy, *args, repeats=1)
    rows.append(("conditional permutation", "numpy", t_np))
    if _kernels.NUMBA_AVAILABLE:
        assert np.array_equal(got_nb, got_np), "backends disagree"
    return rows


def bench_permanova(n_units, m_perms, seed):
    rng = np.random.default_rng(seed)
    y = rng.normal(size=(n_units, 9))
    y -= y.mean(axis=1, keepdims=True)
    sq = np.einsum("ij,ij->i", y, y)
    labels = rng.integers(0, 4, size=n_units).astype(np.int64)
    labels[:4] = np.arange(4)
    sizes = np.bincount(labels, minlength=4).astype(np.int64)
    args = (y, sq, labels, sizes, 123.4, m_perms, 42)
    rows = []
    if _kernels.NUMBA_AVAILABLE:
        _kernels.permanova_null_numba(*args)
        got_nb, t_nb = _time(_kernels.permanova_null_numba, *args)
        rows.append(("label-shuffle pseudo-F", "numba", t_nb))
    got_np, t_np = _time(_kernels.permanova_null_numpy, *args, repeats=1)
    rows.append(("label-shuffle pseudo-F", "numpy", t_np))
    if _kernels.NUMBA_AVAILABLE:
        assert np.array_equal(got_nb, got_np), "backends disagree"
    return rows


def bench_copeland(n_units, seed):
    from geovuln.ranking import copeland_fast

    rng = np.random.default_rng(seed)
    r1 = rng.permutation(n_units) + 1
    r2 = rng.permutation(n_units) + 1
    r3 = rng.permutation(n_units) + 1
    rows = []
    if _kernels.NUMBA_AVAILABLE:
        _kernels.copeland_brute_numba(r1, r2, r3)
        got_nb, t_nb = _time(_kernels.copeland_brute_numba, r1, r2, r3)
        rows.append(("all-pairs Copeland", "numba", t_nb))
    got_np, t_np = _time(_kernels.copeland_brute_numpy, r1, r2, r3, repeats=1)
    rows.append(("all-pairs Copeland", "numpy", t_np))
    got_fast, t_fast = _time(copeland_fast, r1, r2, r3)
    rows.append(("decomposed Copeland", "python", t_fast))
    assert np.array_equal(got_np, got_fast)
    if _kernels.NUMBA_AVAILABLE:
        assert np.array_equal(got_nb, got_np)
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--units", type=int, default=1000)
    ap.add_argument("--permutations", type=int, default=199)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    print(f"backend available: numba={_kernels.NUMBA_AVAILABLE} "
          f"(active: {_kernels.backend()}); units={args.units}, "
          f"permutations={args.permutations}")
    rows = []
    rows += bench_lisa(args.units, args.permutations, args.seed)
    rows += bench_permanova(args.units, args.permutations, args.seed)
    rows += bench_copeland(args.units, args.seed)

    print(f"\n{'kernel':28s} {'path':8s} {'best time':>12s}")
    print("-" * 52)
    base = {}
    for kernel, path, t in rows:
        base.setdefault(kernel, t)
        rel = "" if t == base[kernel] else f"  ({t / base[kernel]:6.1f}x slower)"
        print(f"{kernel:28s} {path:8s} {t * 1000:10.2f} ms{rel}")
    print("\nall paths produced identical outputs")


if __name__ == "__main__":
    main()
