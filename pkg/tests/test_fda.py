import math

import numpy as np
import pytest

from geovuln import fda, ingest
from geovuln.errors import GeovulnError

YEARS = fda.YEARS


def _record(uid, series):
    return ingest.MunicipalityRecord(
        unit_id=uid, name=uid, province_id="P", region_id="R",
        ag_max=0.1, ivsm=100.0, var_perc=0.0, eta_q3=55.0, pop=10.0,
        building_comp=tuple(np.full(9, 1 / 9)),
        pop_series=None if series is None else tuple(series),
    )


class TestLogGrowth:
    def test_constant_population_gives_zero_curve(self):
        ds = ingest.build_dataset([_record("A", [500.0] * 21)])
        curves = fda.log_growth(ds)
        np.testing.assert_array_equal(curves[0].log_growth, np.zeros(21))

    def test_doubling_population_ends_at_log_two(self):
        series = np.linspace(100.0, 200.0, 21)
        ds = ingest.build_dataset([_record("A", series)])
        curve = fda.log_growth(ds)[0]
        assert curve.log_growth[0] == 0.0
        assert curve.log_growth[-1] == pytest.approx(math.log(2.0))

    def test_constant_rate_growth_is_linear(self):
        series = 100.0 * 1.1 ** np.arange(21)
        ds = ingest.build_dataset([_record("A", series)])
        curve = fda.log_growth(ds)[0]
        expected = np.arange(21) * math.log(1.1)
        np.testing.assert_allclose(curve.log_growth, expected, rtol=1e-12)

    def test_units_without_series_skipped(self):
        ds = ingest.build_dataset([_record("A", [10.0] * 21), _record("B", None)])
        curves = fda.log_growth(ds)
        assert [c.unit_id for c in curves] == ["A"]

    def test_nonpositive_population_unit_skipped(self):
        bad = [10.0] * 21
        bad[5] = 0.0
        ds = ingest.build_dataset([_record("A", bad), _record("B", [10.0] * 21)])
        curves = fda.log_growth(ds)
        assert [c.unit_id for c in curves] == ["B"]


class TestSmoothBspline:
    def test_reproduces_cubics(self):
        t = YEARS - YEARS[0]
        cubic = 0.5 + 0.3 * t - 0.02 * t**2 + 0.001 * t**3
        fitted, coef = fda.smooth_bspline(cubic)
        assert coef.shape == (11,)
        np.testing.assert_allclose(fitted, cubic, atol=1e-8)

    def test_zero_curve_zero_fit(self):
        fitted, coef = fda.smooth_bspline(np.zeros(21))
        np.testing.assert_allclose(fitted, 0.0, atol=1e-12)
        np.testing.assert_allclose(coef, 0.0, atol=1e-12)

    def test_linear_operator(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=21)
        b = rng.normal(size=21)
        fa, _ = fda.smooth_bspline(a)
        fb, _ = fda.smooth_bspline(b)
        fab, _ = fda.smooth_bspline(2.0 * a - 0.5 * b)
        np.testing.assert_allclose(fab, 2.0 * fa - 0.5 * fb, atol=1e-10)

    def test_smoothing_beats_noise(self):
        rng = np.random.default_rng(1)
        truth = 0.01 * (YEARS - YEARS[0])
        rmse_raw, rmse_fit = [], []
        for _ in range(50):
            noisy = truth + rng.normal(0, 0.02, size=21)
            fitted, _ = fda.smooth_bspline(noisy)
            rmse_raw.append(np.sqrt(((noisy - truth) ** 2).mean()))
            rmse_fit.append(np.sqrt(((fitted - truth) ** 2).mean()))
        assert np.mean(rmse_fit) < np.mean(rmse_raw)

    def test_wrong_length_rejected(self):
        with pytest.raises(GeovulnError):
            fda.smooth_bspline(np.zeros(20))

    def test_batch_matches_single(self):
        rng = np.random.default_rng(2)
        mat = rng.normal(size=(5, 21))
        fitted, coefs = fda.smooth_bspline_batch(mat)
        for i in range(5):
            f_i, c_i = fda.smooth_bspline(mat[i])
            np.testing.assert_allclose(fitted[i], f_i, atol=1e-12)
            np.testing.assert_allclose(coefs[i], c_i, atol=1e-12)


class TestFpca:
    def _curves(self, n=40, seed=0):
        rng = np.random.default_rng(seed)
        t = (YEARS - YEARS[0]) / 20.0
        slopes = rng.normal(0, 0.1, size=n)
        wiggle = rng.normal(0, 0.01, size=(n, 1)) * np.sin(2 * np.pi * t)
        return slopes[:, None] * t + wiggle

    def test_antipodal_pair_single_component(self):
        t = (YEARS - YEARS[0]) / 20.0
        f = 0.3 * t + 0.1 * np.sin(2 * np.pi * t)
        res = fda.fpca(np.vstack([f, -f]))
        assert res.explained[0] == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(res.mean_curve, 0.0, atol=1e-15)

    def test_harmonics_orthonormal_under_trapezoid(self):
        res = fda.fpca(self._curves())
        w = np.ones(21)
        w[0] = w[-1] = 0.5
        gram = (res.harmonics * w) @ res.harmonics.T
        np.testing.assert_allclose(gram, np.eye(gram.shape[0]), atol=1e-8)

    def test_explained_sums_to_one(self):
        res = fda.fpca(self._curves(seed=1))
        assert res.explained.sum() == pytest.approx(1.0, abs=1e-10)

    def test_scores_centered(self):
        res = fda.fpca(self._curves(seed=2))
        np.testing.assert_allclose(res.scores.mean(axis=0), 0.0, atol=1e-10)

    def test_common_curve_shift_absorbed_by_mean(self):
        curves = self._curves(seed=3)
        t = (YEARS - YEARS[0]) / 20.0
        shifted = curves + 5.0 * np.cos(np.pi * t)
        a = fda.fpca(curves)
        b = fda.fpca(shifted)
        np.testing.assert_allclose(a.scores, b.scores, atol=1e-8)

    def test_pc1_score_tracks_growth(self):
        curves = self._curves(seed=4)
        res = fda.fpca(curves)
        corr = np.corrcoef(res.scores[:, 0], curves[:, -1])[0, 1]
        assert corr > 0.9

    def test_needs_two_curves(self):
        with pytest.raises(GeovulnError):
            fda.fpca(np.zeros((1, 21)))

    def test_identical_curves_degenerate(self):
        res = fda.fpca(np.tile(np.linspace(0, 1, 21), (5, 1)))
        assert res.degenerate
        np.testing.assert_allclose(res.explained, 0.0)
