"""Global and local spatial association with conditional permutation inference.

The global statistic is the row-standardized Moran coefficient computed on
z-scores, I = (1/n) sum_i z_i * lag(z)_i, equal to the classical double-sum
form on the same units.  The local statistic I_i = z_i * lag(z)_i is tested
by conditional permutation: z_i stays put while the neighbor values are
resampled without replacement from the remaining n-1 values, which is
equivalent to reallocating all other observations and only ever affects the
lag.  Pseudo p-values are one-sided on the side of the observed lag,
p = (R+1)/(M+1) with ties counted as extreme.  Because the tail is chosen
from the data, this classical convention is calibrated against the folded
uniform (P(p <= t) ~= 2t under a noise field), like the usual LISA map
pseudo significance.  Islands are excluded from estimation and reported with
an Undefined quadrant.
"""

import enum
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DegenerateFieldError, GeovulnError
from .spatial import spatial_lag

SEVERE_HAZARD_THRESHOLD = 0.15  # macro split: severe above, mild at or below


class Quadrant(enum.Enum):
    HIGH_HIGH = "HighHigh"
    LOW_LOW = "LowLow"
    LOW_HIGH = "LowHigh"
    HIGH_LOW = "HighLow"
    UNDEFINED = "Undefined"


@dataclass(frozen=True)
class StandardizedField:
    values: np.ndarray  # z-scores; NaN at islands
    mean: float
    scale: float


@dataclass(frozen=True)
class LisaResult:
    unit_id: str
    z: float
    lag: float
    local_i: float
    p_value: float | None
    quadrant: Quadrant
    significant: bool


@dataclass(frozen=True)
class StratifiedHotspot:
    unit_id: str
    base_class: Quadrant
    hazard_macro: str  # "Severe" or "Mild"


def standardize(values, w):
    """Z-scores with population (divide-by-n) standard deviation.

    Mean and scale are taken over non-island units only; islands get NaN.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (len(w),):
        raise GeovulnError("field length does not match unit count")
    live = w.non_island_indices
    if live.size < 2:
        raise DegenerateFieldError("need at least 2 non-island units")
    x = values[live]
    mean = x.mean()
    scale = x.std()  # ddof=0
    if scale == 0.0:
        raise DegenerateFieldError("field is constant on non-island units")
    z = np.full(len(w), np.nan)
    z[live] = (x - mean) / scale
    return StandardizedField(values=z, mean=float(mean), scale=float(scale))


def morans_i(w, values):
    """Global Moran coefficient over non-island units."""
    sf = standardize(values, w)
    lag = spatial_lag(w, sf.values)
    live = w.non_island_indices
    return float((sf.values[live] * lag[live]).mean())


def _classify(z, lag):
    if np.isnan(z) or np.isnan(lag) or z == 0.0 or lag == 0.0:
        return Quadrant.UNDEFINED
    if z > 0:
        return Quadrant.HIGH_HIGH if lag > 0 else Quadrant.HIGH_LOW
    return Quadrant.LOW_HIGH if lag > 0 else Quadrant.LOW_LOW


def lisa(w, values, m_permutations=999, alpha=0.05, seed=0):
    """Local association statistics with conditional permutation p-values.

    Returns one :class:`LisaResult` per unit in dataset order.  Random
    streams are keyed by (seed, canonical unit index, permutation, draw), so
    results do not depend on scheduling or worker count.
    """
    if m_permutations < 99:
        raise GeovulnError("m_permutations must be at least 99")
    if not (0.0 < alpha < 1.0):
        raise GeovulnError("alpha must lie in (0,1)")
    sf = standardize(values, w)
    lag = spatial_lag(w, sf.values)
    live = w.non_island_indices

    z_sub = sf.values[live]
    lag_sub = lag[live]
    n_neighbors = w.n_neighbors[live]
    unit_keys = live.astype(np.int64) + 1  # 0 is reserved for label shuffles
    counts = _kernels.lisa_tail_counts(z_sub, n_neighbors, unit_keys, lag_sub,
                                       m_permutations, seed)
    p_sub = (counts + 1.0) / (m_permutations + 1.0)

    results = []
    p_by_unit = dict(zip(live.tolist(), p_sub.tolist()))
    for i, uid in enumerate(w.unit_ids):
        if w.island_flags[i]:
            results.append(LisaResult(uid, float("nan"), float("nan"), float("nan"),
                                      None, Quadrant.UNDEFINED, False))
            continue
        z_i = float(sf.values[i])
        lag_i = float(lag[i])
        p = p_by_unit[i]
        results.append(
            LisaResult(
                unit_id=uid,
                z=z_i,
                lag=lag_i,
                local_i=z_i * lag_i,
                p_value=p,
                quadrant=_classify(z_i, lag_i),
                significant=p <= alpha,
            )
        )
    return results


def stratify(lisa_results, hazard_by_unit):
    """Cross-label significant HighHigh/LowLow units by hazard macro-class.

    ``hazard_by_unit`` maps unit_id to its peak ground acceleration; Severe
    means strictly above the macro threshold (the boundary value belongs to
    the mild side, consistent with right-closed hazard bins).
    """
    out = []
    for r in lisa_results:
        if not r.significant or r.quadrant not in (Quadrant.HIGH_HIGH, Quadrant.LOW_LOW):
            continue
        ag = hazard_by_unit[r.unit_id]
        macro = "Severe" if ag > SEVERE_HAZARD_THRESHOLD else "Mild"
        out.append(StratifiedHotspot(unit_id=r.unit_id, base_class=r.quadrant, hazard_macro=macro))
    return out
