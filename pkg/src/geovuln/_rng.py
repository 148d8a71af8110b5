"""Counter-based random streams shared by the permutation engines.

Every random draw is a pure function of a 4-tuple of 64-bit coordinates
``(seed, a, b, c)``, so re-evaluating a draw in any order, on any number of
workers, yields the same value.  Coordinate conventions used in this package:

* conditional permutation of a field around unit ``u``:
  ``a = canonical_index(u) + 1``, ``b = permutation index``, ``c = draw counter``
* wholesale label shuffles (group relabeling): ``a = 0``, ``b = permutation
  index``, ``c = Fisher-Yates step``

The mixing function is the splitmix64 finalizer applied to a linear
combination of the coordinates.  ``numba``-compiled clones of these helpers
live in ``_kernels``; ``tests/test_kernels.py`` pins scalar-for-scalar
equality between the two copies.

All helpers operate on uint64 ndarrays: numpy scalar uint64 arithmetic warns
on overflow while array arithmetic wraps silently like C (and like numba).
"""

import numpy as np

U64 = np.uint64

# splitmix64 finalizer constants plus two odd multipliers for coordinate folding
GAMMA = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB
FOLD_A = 0xD1342543DE82EF95
FOLD_B = 0xAF251AF3B0F025B5


def mix64(z):
    """splitmix64 finalizer on a uint64 ndarray."""
    z = np.asarray(z, dtype=U64)
    with np.errstate(over="ignore"):  # wraparound is the point
        z = (z ^ (z >> U64(30))) * U64(MIX1)
        z = (z ^ (z >> U64(27))) * U64(MIX2)
        return z ^ (z >> U64(31))


def rand_u64(seed, a, b, c):
    """Uniform uint64 at stream coordinates (seed, a, b, c); broadcasts."""
    seed = np.asarray(seed, dtype=U64)
    a = np.asarray(a, dtype=U64)
    b = np.asarray(b, dtype=U64)
    c = np.asarray(c, dtype=U64)
    with np.errstate(over="ignore"):
        z = seed ^ (a * U64(FOLD_A))
        z = mix64(z + U64(GAMMA))
        z = z ^ (b * U64(FOLD_B))
        z = mix64(z + U64(GAMMA))
        z = z ^ (c * U64(GAMMA))
    return mix64(z)


def rand_below(seed, a, b, c, bound):
    """Uniform integer in [0, bound) at the given coordinates; broadcasts.

    Plain modulo: the bias is O(bound / 2**64), irrelevant at the bounds used
    here, and the rule is trivially reproduced in the compiled kernels.
    """
    return rand_u64(seed, a, b, c) % np.asarray(bound, dtype=U64)
