"""Demographic growth curves, B-spline smoothing, and functional PCA.

Each unit's curve is the log of its population in year t over its 1992
population, observed yearly through 2012 (21 points).  Curves are smoothed by
least squares onto 11 cubic B-splines with equally spaced interior knots, and
the smoothed curves are decomposed by PCA weighted with trapezoidal
quadrature on the yearly grid, so harmonics are orthonormal in the L2 sense.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

from .errors import GeovulnError
from .ingest import SERIES_YEARS

log = logging.getLogger("geovuln")

YEARS = np.array(SERIES_YEARS, dtype=np.float64)
N_BASIS = 11
SPLINE_DEGREE = 3


@dataclass(frozen=True)
class GrowthCurve:
    unit_id: str
    log_growth: np.ndarray  # 21 values, first is 0 by construction


@dataclass(frozen=True)
class FpcaResult:
    mean_curve: np.ndarray   # on the yearly grid
    harmonics: np.ndarray    # (k, grid) orthonormal under trapezoid weights
    scores: np.ndarray       # (n, k)
    explained: np.ndarray    # (k,)
    degenerate: bool = False


def log_growth(ds):
    """Log proportional-growth curves for units with a population series.

    Units without a series are skipped with a warning; nonpositive counts
    are a per-unit error (also skipped, reported).
    """
    curves = []
    missing = 0
    bad = []
    for r in ds.records:
        if r.pop_series is None:
            missing += 1
            continue
        series = np.asarray(r.pop_series, dtype=np.float64)
        if series.shape != (len(YEARS),):
            bad.append(r.unit_id)
            continue
        if (series <= 0).any():
            bad.append(r.unit_id)
            continue
        curves.append(GrowthCurve(unit_id=r.unit_id, log_growth=np.log(series / series[0])))
    if missing:
        log.warning("%d unit(s) lack a population series; skipped in curve analyses", missing)
    for uid in bad:
        log.error("unusable population series for %s; unit skipped", uid)
    return curves


def _knots():
    a, b = YEARS[0], YEARS[-1]
    # 11 cubic basis functions need 7 equally spaced interior knots
    interior = np.linspace(a, b, N_BASIS - SPLINE_DEGREE + 1)[1:-1]
    return np.concatenate((np.repeat(a, SPLINE_DEGREE + 1), interior, np.repeat(b, SPLINE_DEGREE + 1)))


_KNOTS = _knots()
_DESIGN = BSpline.design_matrix(YEARS, _KNOTS, SPLINE_DEGREE).toarray()
# least-squares projector, precomputed once: coefficients = _SOLVER @ values
_SOLVER = np.linalg.solve(_DESIGN.T @ _DESIGN, _DESIGN.T)


def smooth_bspline(values):
    """Least-squares fit of one 21-point curve onto the 11-spline basis.

    Returns ``(fitted, coefficients)`` with the fit evaluated on the yearly
    grid.  Cubic polynomials are reproduced exactly.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.shape != YEARS.shape:
        raise GeovulnError(f"expected {YEARS.shape[0]} yearly observations")
    coef = _SOLVER @ values
    return _DESIGN @ coef, coef


def smooth_bspline_batch(matrix):
    """Row-wise :func:`smooth_bspline`; returns (fitted (n,21), coeffs (n,11))."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    coef = matrix @ _SOLVER.T
    return coef @ _DESIGN.T, coef


def _trapezoid_weights(grid):
    w = np.empty_like(grid)
    w[1:-1] = (grid[2:] - grid[:-2]) / 2.0
    w[0] = (grid[1] - grid[0]) / 2.0
    w[-1] = (grid[-1] - grid[-2]) / 2.0
    return w


def fpca(curves, grid=YEARS, endpoint_orient=True):
    """Quadrature-weighted PCA of grid-evaluated curves.

    ``curves`` is an (n, grid) matrix (typically the smoothed log-growth
    curves).  Harmonics are orthonormal under the trapezoidal inner product;
    scores are the L2 projections of the centered curves.  The first
    component is oriented so that a larger score goes with a growing
    population (positive correlation with the curve's end value).
    """
    curves = np.atleast_2d(np.asarray(curves, dtype=np.float64))
    n, m = curves.shape
    if n < 2:
        raise GeovulnError("need at least 2 curves")
    w = _trapezoid_weights(np.asarray(grid, dtype=np.float64))
    sw = np.sqrt(w)
    mean_curve = curves.mean(axis=0)
    xc = curves - mean_curve
    b = xc * sw
    cov = (b.T @ b) / (n - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    lam = np.clip(eigvals[order], 0.0, None)
    keep = min(n - 1, m)
    lam = lam[:keep]
    u = eigvecs[:, order[:keep]]
    harmonics = (u / sw[:, None]).T          # rows orthonormal under w
    scores = b @ u                           # == xc @ (w * harmonic)

    total = lam.sum()
    # identical curves leave only rounding noise in the centered data
    degenerate = total <= 1e-24 * max(1.0, float((curves * curves).sum()))
    explained = lam / total if not degenerate else np.zeros_like(lam)
    if degenerate:
        log.warning("degenerate curve set: all curves identical")

    if endpoint_orient and not degenerate:
        # larger score should mean growth: align PC1 with the curve endpoint
        align = float(scores[:, 0] @ xc[:, -1])
        if align < 0:
            harmonics[0] = -harmonics[0]
            scores[:, 0] = -scores[:, 0]
    for c in range(1 if endpoint_orient else 0, harmonics.shape[0]):
        ref = harmonics[c, np.argmax(np.abs(harmonics[c]))]
        if ref < 0:
            harmonics[c] = -harmonics[c]
            scores[:, c] = -scores[:, c]
    return FpcaResult(
        mean_curve=mean_curve,
        harmonics=harmonics,
        scores=scores,
        explained=explained,
        degenerate=degenerate,
    )
