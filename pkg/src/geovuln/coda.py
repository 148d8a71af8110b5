"""Aitchison-geometry operations on building-stock compositions.

A composition is a strictly positive vector summing to 1 (one row of a 2-D
array when operating on batches).  The centered log-ratio map sends it to the
zero-sum subspace of R^p where ordinary Euclidean tools apply: principal
components are eigenvectors of the clr covariance, and the hazard-effect test
is a permutational one-way ANOVA on clr Euclidean distances.
"""

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DomainError, GeovulnError
from .ingest import BUILDING_CLASSES, closure

log = logging.getLogger("geovuln")

#: macro time intervals: very old stock / pre-regulation stock / modern stock
TERNARY_CLASSES = ("<1919", "1919-1980", ">1980")
_TERNARY_SPLIT = (1, 5)  # class 0 | classes 1..4 | classes 5..8


def _as_comp(x):
    x = np.asarray(x, dtype=np.float64)
    if (x <= 0).any():
        raise DomainError("composition parts must be strictly positive")
    return x


def perturb(x, y):
    """Aitchison perturbation: componentwise product, reclosed."""
    return closure(_as_comp(x) * _as_comp(y))


def power(alpha, x):
    """Aitchison powering: componentwise power, reclosed."""
    return closure(_as_comp(x) ** float(alpha))


def ait_inner(x, y):
    """Aitchison inner product, (1/2p) sum_jk ln(xj/xk) ln(yj/yk)."""
    lx = np.log(_as_comp(x))
    ly = np.log(_as_comp(y))
    p = lx.shape[0]
    dx = lx[:, None] - lx[None, :]
    dy = ly[:, None] - ly[None, :]
    return float((dx * dy).sum() / (2 * p))


def clr(x):
    """Centered log-ratio: log of each part over the geometric mean."""
    x = np.asarray(x, dtype=np.float64)
    if (x <= 0).any():
        raise DomainError("composition parts must be strictly positive")
    lx = np.log(x)
    return lx - lx.mean(axis=-1, keepdims=True)


def clr_inv(v, tol=1e-8):
    """Inverse clr: closure of exp.  Input must sum to ~0 (re-centered)."""
    v = np.asarray(v, dtype=np.float64)
    s = v.sum(axis=-1)
    if np.max(np.abs(s)) > tol:
        raise DomainError("clr_inv input does not lie in the zero-sum subspace")
    v = v - v.mean(axis=-1, keepdims=True)
    e = np.exp(v)
    return e / e.sum(axis=-1, keepdims=True)


def coda_mean(xs):
    """Aitchison mean: inverse clr of the average clr image."""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    if xs.shape[0] == 0:
        raise GeovulnError("cannot average an empty set of compositions")
    return clr_inv(clr(xs).mean(axis=0), tol=np.inf)


def aggregate_ternary(comp, labels=BUILDING_CLASSES):
    """Sum the nine time classes into the three macro intervals.

    The result may contain zeros (a municipality with no very old stock);
    zero replacement is applied dataset-wise before any Aitchison operation,
    mirroring the nine-class ingestion path.
    """
    comp = np.asarray(comp, dtype=np.float64)
    if tuple(labels) != BUILDING_CLASSES:
        raise GeovulnError(f"unexpected class labels {tuple(labels)!r}")
    if comp.shape[-1] != len(BUILDING_CLASSES):
        raise GeovulnError("expected nine time-of-construction shares")
    a, b = _TERNARY_SPLIT
    out = np.stack(
        [
            comp[..., :a].sum(axis=-1),
            comp[..., a:b].sum(axis=-1),
            comp[..., b:].sum(axis=-1),
        ],
        axis=-1,
    )
    return out


@dataclass(frozen=True)
class CodaPcaResult:
    center: np.ndarray          # Aitchison mean composition
    loadings: np.ndarray        # (p, k) orthonormal clr directions, columns
    scores: np.ndarray          # (n, k)
    explained: np.ndarray       # (k,) variance fractions
    sdev: np.ndarray            # (k,) sqrt of eigenvalues
    part_labels: tuple
    degenerate: bool = False


def coda_pca(xs, part_labels=BUILDING_CLASSES, orient_part=0, use_correlation=False):
    """Principal components of the clr-transformed compositions.

    The clr covariance (sample, ddof=1) is eigendecomposed; the all-ones
    direction carries no variance and is dropped, leaving p-1 components.
    ``use_correlation`` switches to the correlation matrix of the clr
    coordinates (scores are then of the standardized coordinates).
    The first component is oriented so that its loading on ``orient_part``
    (the oldest time class) is positive: larger scores mean older stock.
    Remaining components get the largest-|loading|-positive convention.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    n, p = xs.shape
    y = clr(xs)
    center_clr = y.mean(axis=0)
    yc = y - center_clr

    k = p - 1
    if n < p:
        warnings.warn(f"only {n} observations for {p} parts; components truncated", stacklevel=2)
        k = max(min(n - 1, p - 1), 0)

    if use_correlation:
        sd = yc.std(axis=0, ddof=1)
        if (sd == 0).any():
            raise GeovulnError("correlation-based components need variance in every coordinate")
        yc = yc / sd
    cov = (yc.T @ yc) / max(n - 1, 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:k]
    lam = np.clip(eigvals[order], 0.0, None)
    load = eigvecs[:, order]

    for c in range(load.shape[1]):
        col = load[:, c]
        ref = col[orient_part] if c == 0 else col[np.argmax(np.abs(col))]
        if ref < 0 or (c == 0 and ref == 0 and col[np.argmax(np.abs(col))] < 0):
            load[:, c] = -col

    scores = yc @ load
    total = lam.sum()
    # identical rows leave only rounding noise in the centered data
    degenerate = total <= 1e-24 * max(1.0, float((y * y).sum()))
    explained = lam / total if not degenerate else np.zeros_like(lam)
    if degenerate:
        log.warning("degenerate composition set: no variability to decompose")
    return CodaPcaResult(
        center=clr_inv(center_clr, tol=np.inf),
        loadings=load,
        scores=scores,
        explained=explained,
        sdev=np.sqrt(lam),
        part_labels=tuple(part_labels),
        degenerate=degenerate,
    )


@dataclass(frozen=True)
class PermanovaResult:
    f0: float
    p_value: float
    ss_t: float
    ss_w: float
    group_sizes: dict
    m_permutations: int
    note: str = ""


def _sum_of_squares(y, sq, labels, group_sizes):
    """(SS_T, SS_W) via the group-sum identity.

    sum_{i<j} d2_ij over a set S equals |S| * sum_i |y_i|^2 - |sum_i y_i|^2.
    SS_T averages all pairs over the total n; SS_W averages each group's
    pairs over its own size n_s (so a null pseudo-F sits near 1, and the
    centroid identity SS_W = sum_s sum_{i in s} |y_i - mean_s|^2 holds).
    Both cost O(n p) instead of O(n^2 p), and SS_W uses the same
    accumulation order as the permutation kernels, so a shuffle reproducing
    the observed labeling yields F* == F0 exactly and counts as a tie.
    """
    n, p = y.shape
    g = group_sizes.shape[0]
    total = n * sq.sum() - float(y.sum(axis=0) @ y.sum(axis=0))
    ss_t = total / n
    q = np.bincount(labels, weights=sq, minlength=g)
    s_mat = np.empty((g, p), dtype=np.float64)
    for d in range(p):
        s_mat[:, d] = np.bincount(labels, weights=y[:, d], minlength=g)
    ss_w = 0.0
    for s in range(g):
        norm2 = 0.0
        for d in range(p):
            norm2 += s_mat[s, d] * s_mat[s, d]
        ss_w += float(q[s]) - norm2 / float(group_sizes[s])
    return ss_t, ss_w


def permanova(xs, groups, m_permutations=1000, seed=0):
    """Permutational one-way ANOVA of compositions across groups.

    Distances are Euclidean between clr images.  The pseudo-F statistic is
    F = ((SS_T - SS_W)/(g-1)) / (SS_W/(n-g)) with
    SS_T = (1/n) sum_{i<j} d2_ij and SS_W = sum_s (1/n_s) sum_{i<j in s}
    d2_ij, the per-group normalization that makes a null F sit near 1.  The
    null is generated by wholesale shuffles of the group-label vector,
    preserving group sizes; p = (#{F* >= F0} + 1)/(M + 1).
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    groups = np.asarray(groups)
    n = xs.shape[0]
    if groups.shape != (n,):
        raise GeovulnError("groups must align with compositions")
    uniq, labels = np.unique(groups, return_inverse=True)
    g = uniq.shape[0]
    if g < 2:
        raise GeovulnError("need at least 2 groups")
    group_sizes = np.bincount(labels, minlength=g).astype(np.int64)
    if (group_sizes < 1).any():
        raise GeovulnError("every group must have at least one member")

    y = clr(xs)
    sq = np.einsum("ij,ij->i", y, y)
    ss_t, ss_w = _sum_of_squares(y, sq, labels, group_sizes)
    note = ""
    if ss_w == 0.0:
        f0 = float("inf") if ss_t > 0 else 0.0
        note = "zero within-group variance; F reported as +inf"
    else:
        f0 = ((ss_t - ss_w) / (g - 1)) / (ss_w / (n - g))

    fstar = _kernels.permanova_null(y, sq, labels, group_sizes, ss_t, m_permutations, seed)
    r = int(np.count_nonzero(fstar >= f0))
    p = (r + 1.0) / (m_permutations + 1.0)
    sizes = {str(uniq[s]): int(group_sizes[s]) for s in range(g)}
    return PermanovaResult(
        f0=float(f0), p_value=float(p), ss_t=float(ss_t), ss_w=float(ss_w),
        group_sizes=sizes, m_permutations=int(m_permutations), note=note,
    )
