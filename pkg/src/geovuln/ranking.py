"""Hazard classes, threshold selection, per-indicator rankings, Copeland scores.

Rank numbers always grow with vulnerability: the social index and the
building-stock score are ranked ascending (rank 1 = least vulnerable), the
population-change indicator descending (rank 1 = fastest growth).  Ties go to
the larger population (a smaller population gets the larger rank number),
then to ascending unit id, so all three rankings are strict total orders.

Unit i beats unit k in the pairwise Copeland competition when its rank number
exceeds k's in at least two of the three rankings; its score C_i is the sum
of the +/-1 results over all opponents.  Because rankings are strict, scores
satisfy sum_i C_i = 0 and C_i = 2*W_i - (n-1) with W_i the number of wins,
and W_i decomposes into pairwise-agreement counts minus twice the unanimity
count:  W = P12 + P13 + P23 - 2*T.  The pairwise counts come from a
Fenwick-tree sweep and the unanimity count from divide and conquer, giving an
O(n log^2 n) path that must agree with the O(n^2) kernel in `_kernels`.
"""

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DomainError, GeovulnError


class HazardClass(enum.Enum):
    LOW = "Low"
    MODERATE = "Moderate"
    MEDIUM = "Medium"
    HIGH = "High"

    @property
    def severe(self):
        return self in (HazardClass.MEDIUM, HazardClass.HIGH)


_HAZARD_UPPER = np.array([0.05, 0.15, 0.25])
_HAZARD_ORDER = (HazardClass.LOW, HazardClass.MODERATE, HazardClass.MEDIUM, HazardClass.HIGH)
#: right-closed class bounds, Table-style
HAZARD_BOUNDS = {
    HazardClass.LOW: (0.0, 0.05),
    HazardClass.MODERATE: (0.05, 0.15),
    HazardClass.MEDIUM: (0.15, 0.25),
    HazardClass.HIGH: (0.25, math.inf),
}


def hazard_class(ag_max):
    """Hazard class of one peak-ground-acceleration value (right-closed bins)."""
    if not ag_max > 0:
        raise DomainError(f"ag_max must be positive, got {ag_max!r}")
    idx = int(np.searchsorted(_HAZARD_UPPER, ag_max, side="left"))
    return _HAZARD_ORDER[idx]


def hazard_classes(ag_values):
    """Vectorized :func:`hazard_class`."""
    ag_values = np.asarray(ag_values, dtype=np.float64)
    if (ag_values <= 0).any():
        raise DomainError("ag_max must be positive for every unit")
    idx = np.searchsorted(_HAZARD_UPPER, ag_values, side="left")
    return np.array([_HAZARD_ORDER[i] for i in idx], dtype=object)


@dataclass(frozen=True)
class SelectionThresholds:
    t_ivsm: float   # upper quartile of the social index
    t_g: float      # lower quartile of the population change
    t_b: float      # upper quartile of the building-stock score
    quantile_method: str


def compute_thresholds(ivsm, var_perc, pc1_scores, quantile_method="linear"):
    """Quartile thresholds for the joint selection criterion.

    ``quantile_method`` is any method accepted by :func:`numpy.quantile`
    ('linear' is the common type-7 convention); it is recorded alongside the
    values so replication deviations stay diagnosable.
    """
    return SelectionThresholds(
        t_ivsm=float(np.quantile(np.asarray(ivsm, dtype=np.float64), 0.75, method=quantile_method)),
        t_g=float(np.quantile(np.asarray(var_perc, dtype=np.float64), 0.25, method=quantile_method)),
        t_b=float(np.quantile(np.asarray(pc1_scores, dtype=np.float64), 0.75, method=quantile_method)),
        quantile_method=quantile_method,
    )


def select(ivsm, var_perc, pc1_scores, thresholds):
    """Units jointly past all three thresholds (inclusive inequalities).

    Returns ``(mask, expected_count, expected_sd)`` where the expectation is
    the independence baseline n*(1/4)^3 with its binomial standard deviation.
    """
    ivsm = np.asarray(ivsm, dtype=np.float64)
    var_perc = np.asarray(var_perc, dtype=np.float64)
    pc1_scores = np.asarray(pc1_scores, dtype=np.float64)
    mask = (ivsm >= thresholds.t_ivsm) & (var_perc <= thresholds.t_g) & (pc1_scores >= thresholds.t_b)
    n = mask.shape[0]
    q = 0.25 ** 3
    return mask, n * q, math.sqrt(n * q * (1 - q))


def indicator_rankings(ivsm, var_perc, pc1_scores, pop, unit_ids):
    """The three per-indicator rank vectors (each a permutation of 1..n)."""
    ivsm = np.asarray(ivsm, dtype=np.float64)
    var_perc = np.asarray(var_perc, dtype=np.float64)
    pc1_scores = np.asarray(pc1_scores, dtype=np.float64)
    pop = np.asarray(pop, dtype=np.float64)
    unit_ids = np.asarray(unit_ids)

    def ranks_for(primary):
        order = np.lexsort((unit_ids, -pop, primary))
        r = np.empty(order.shape[0], dtype=np.int64)
        r[order] = np.arange(1, order.shape[0] + 1)
        return r

    return ranks_for(ivsm), ranks_for(-var_perc), ranks_for(pc1_scores)


def _check_permutation(r, name):
    r = np.asarray(r, dtype=np.int64)
    n = r.shape[0]
    if not np.array_equal(np.sort(r), np.arange(1, n + 1)):
        raise GeovulnError(f"ranking '{name}' is not a permutation of 1..{n}")
    return r


class _Fenwick:
    """Prefix-count tree over values 1..n."""

    def __init__(self, n):
        self.tree = np.zeros(n + 1, dtype=np.int64)

    def add(self, v, delta=1):
        tree = self.tree
        while v < tree.shape[0]:
            tree[v] += delta
            v += v & (-v)

    def count_below(self, v):
        # number of inserted values strictly less than v
        v -= 1
        total = 0
        tree = self.tree
        while v > 0:
            total += tree[v]
            v -= v & (-v)
        return int(total)


def _pairwise_dominance(ra, rb):
    """P_i = #{k: ra[k] < ra[i] and rb[k] < rb[i]} for all i, by sweep."""
    n = ra.shape[0]
    order = np.empty(n, dtype=np.int64)
    order[ra - 1] = np.arange(n)  # units in ascending ra order
    bit = _Fenwick(n)
    out = np.empty(n, dtype=np.int64)
    for u in order:
        out[u] = bit.count_below(rb[u])
        bit.add(int(rb[u]))
    return out


def _triple_dominance(r1, r2, r3):
    """T_i = #{k: r1,r2,r3 all smaller than unit i's}, by divide and conquer."""
    n = r1.shape[0]
    seq = np.empty(n, dtype=np.int64)
    seq[r1 - 1] = np.arange(n)  # ascending r1; earlier in seq => smaller r1
    out = np.zeros(n, dtype=np.int64)
    bit = _Fenwick(n)

    def solve(lo, hi):
        if hi - lo <= 1:
            return
        mid = (lo + hi) // 2
        solve(lo, mid)
        solve(mid, hi)
        sources = seq[lo:mid][np.argsort(r2[seq[lo:mid]])]
        queries = seq[mid:hi][np.argsort(r2[seq[mid:hi]])]
        si = 0
        inserted = []
        for q in queries:
            while si < sources.shape[0] and r2[sources[si]] < r2[q]:
                bit.add(int(r3[sources[si]]))
                inserted.append(int(r3[sources[si]]))
                si += 1
            out[q] += bit.count_below(r3[q])
        for v in inserted:
            bit.add(v, -1)

    solve(0, n)
    return out


def copeland_fast(r1, r2, r3):
    """Copeland scores by the pairwise/unanimity decomposition."""
    wins = (
        _pairwise_dominance(r1, r2)
        + _pairwise_dominance(r1, r3)
        + _pairwise_dominance(r2, r3)
        - 2 * _triple_dominance(r1, r2, r3)
    )
    return 2 * wins - (r1.shape[0] - 1)


def copeland(r1, r2, r3, method="fast"):
    """Copeland scores from three rank permutations.

    ``method``: 'fast' (decomposition), 'brute' (all-pairs kernel), or
    'both' (run both, assert agreement, return the fast result).
    """
    r1 = _check_permutation(r1, "r1")
    r2 = _check_permutation(r2, "r2")
    r3 = _check_permutation(r3, "r3")
    if method not in ("fast", "brute", "both"):
        raise GeovulnError(f"unknown copeland method {method!r}")
    if method == "brute":
        return _kernels.copeland_brute(r1, r2, r3)
    scores = copeland_fast(r1, r2, r3)
    if method == "both":
        brute = _kernels.copeland_brute(r1, r2, r3)
        if not np.array_equal(scores, brute):
            raise GeovulnError("copeland decomposition disagrees with the all-pairs kernel")
    return scores


@dataclass(frozen=True)
class CopelandResult:
    unit_id: str
    r1: int
    r2: int
    r3: int
    copeland: int


def copeland_table(unit_ids, r1, r2, r3, scores):
    return [
        CopelandResult(unit_id=str(u), r1=int(a), r2=int(b), r3=int(c), copeland=int(s))
        for u, a, b, c, s in zip(unit_ids, r1, r2, r3, scores)
    ]


def _five_numbers(values):
    values = np.asarray(values, dtype=np.float64)
    q1, q2, q3 = np.percentile(values, [25, 50, 75])
    return {
        "count": int(values.shape[0]),
        "min": float(values.min()),
        "q1": float(q1),
        "median": float(q2),
        "q3": float(q3),
        "max": float(values.max()),
    }


def score_by_hazard(scores, classes):
    """Score distributions conditional on hazard class.

    Returns five-number summaries plus full score lists per class, and a
    descriptive pairwise dominance table: for each ordered class pair the
    probability that a score from the higher class exceeds one from the
    lower (ties counted half), flagged when above 0.5.  No multiplicity
    correction is applied.
    """
    scores = np.asarray(scores, dtype=np.float64)
    classes = np.asarray(classes, dtype=object)
    present = [c for c in _HAZARD_ORDER if (classes == c).any()]
    per_class = {}
    for c in present:
        vals = scores[classes == c]
        per_class[c.value] = {**_five_numbers(vals), "scores": vals.tolist()}
    dominance = []
    for i in range(len(present)):
        for j in range(i + 1, len(present)):
            lo_c, hi_c = present[i], present[j]
            lo = np.sort(scores[classes == lo_c])
            hi = scores[classes == hi_c]
            below = np.searchsorted(lo, hi, side="left").sum()
            ties = (np.searchsorted(lo, hi, side="right") - np.searchsorted(lo, hi, side="left")).sum()
            cles = (below + 0.5 * ties) / (lo.shape[0] * hi.shape[0])
            dominance.append(
                {
                    "lower_class": lo_c.value,
                    "higher_class": hi_c.value,
                    "p_higher_exceeds": float(cles),
                    "dominates": bool(cles > 0.5),
                }
            )
    return {"per_class": per_class, "dominance": dominance}
