import itertools

import numpy as np
import pytest

from geovuln import autocorr, ingest, spatial
from geovuln.autocorr import Quadrant
from geovuln.errors import DegenerateFieldError, GeovulnError


def _dataset(ids):
    records = [
        ingest.MunicipalityRecord(
            unit_id=u, name=u, province_id="P", region_id="R",
            ag_max=0.1, ivsm=100.0, var_perc=0.0, eta_q3=55.0, pop=10.0,
            building_comp=tuple(np.full(9, 1 / 9)),
        )
        for u in ids
    ]
    return ingest.build_dataset(records)


def _weights(ids, pairs):
    return spatial.build_weights(_dataset(ids), pairs)


def _random_graph(rng, n=20, p_edge=0.2):
    ids = [f"N{i:02d}" for i in range(n)]
    pairs = [(ids[i], ids[j]) for i in range(n) for j in range(i + 1, n)
             if rng.random() < p_edge]
    return _weights(ids, pairs)


class TestStandardize:
    def test_symmetric_pair(self):
        w = _weights(["A", "B"], [("A", "B")])
        sf = autocorr.standardize(np.array([0.0, 2.0]), w)
        np.testing.assert_allclose(sf.values, [-1.0, 1.0])
        assert sf.mean == 1.0 and sf.scale == 1.0

    def test_constant_field_errors(self):
        w = _weights(["A", "B", "C"], [("A", "B"), ("B", "C")])
        with pytest.raises(DegenerateFieldError):
            autocorr.standardize(np.full(3, 5.0), w)

    def test_moments_over_non_islands(self):
        w = _weights(["A", "B", "C", "D"], [("A", "B"), ("B", "C")])  # D island
        rng = np.random.default_rng(0)
        x = rng.normal(size=4)
        sf = autocorr.standardize(x, w)
        live = w.non_island_indices
        assert abs(sf.values[live].mean()) < 1e-10
        assert abs(sf.values[live].std() - 1.0) < 1e-10
        assert np.isnan(sf.values[list(w.unit_ids).index("D")])


class TestMoransI:
    def test_two_unit_anticorrelation(self):
        w = _weights(["A", "B"], [("A", "B")])
        assert autocorr.morans_i(w, np.array([0.0, 2.0])) == pytest.approx(-1.0)

    def test_matches_double_sum_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            w = _random_graph(rng)
            x = rng.normal(size=len(w))
            left = autocorr.morans_i(w, x)
            live = w.non_island_indices
            xs = x[live]
            xbar = xs.mean()
            num = 0.0
            s0 = 0.0
            for ii, i in enumerate(live):
                nb = w.neighbors[i]
                for j in nb:
                    wij = 1.0 / len(nb)
                    num += wij * (x[i] - xbar) * (x[j] - xbar)
                    s0 += wij
            den = ((xs - xbar) ** 2).sum()
            right = len(live) / s0 * num / den
            assert left == pytest.approx(right, rel=1e-10)

    def test_affine_invariance(self):
        rng = np.random.default_rng(3)
        w = _random_graph(rng)
        x = rng.normal(size=len(w))
        base = autocorr.morans_i(w, x)
        assert autocorr.morans_i(w, 3.5 * x + 11.0) == pytest.approx(base, abs=1e-12)
        assert autocorr.morans_i(w, -2.0 * x + 4.0) == pytest.approx(base, abs=1e-12)


def _star_instance():
    # unit 0 with 3 neighbors; 4 high values clustered on 0..3, low elsewhere
    ids = [f"S{i}" for i in range(9)]
    pairs = [(ids[0], ids[1]), (ids[0], ids[2]), (ids[0], ids[3]), (ids[1], ids[2]),
             (ids[3], ids[4]), (ids[4], ids[5]), (ids[5], ids[6]),
             (ids[6], ids[7]), (ids[7], ids[8])]
    w = _weights(ids, pairs)
    x = np.array([10.0, 10.0, 10.0, 10.0, 0.0, 0.0, 0.0, 0.0, 0.0])
    return w, x


class TestLisa:
    def test_hot_center_matches_exhaustive_oracle(self):
        w, x = _star_instance()
        m = 999
        results = autocorr.lisa(w, x, m_permutations=m, alpha=0.05, seed=1)
        r0 = results[0]
        assert r0.quadrant is Quadrant.HIGH_HIGH
        # exact conditional distribution: every 3-subset of the other 8
        # standardized values is equally likely to land on the neighbors
        sf = autocorr.standardize(x, w)
        others = np.delete(sf.values, 0)
        exact = []
        for comb in itertools.combinations(range(8), 3):
            exact.append(others[list(comb)].mean())
        exact = np.array(exact)
        f = (exact >= r0.lag).mean() if r0.lag >= 0 else (exact <= r0.lag).mean()
        tol = 4 * np.sqrt(f * (1 - f) / m) + 2 / m
        assert r0.p_value == pytest.approx(f, abs=tol)
        assert r0.significant and r0.p_value < 0.05

    def test_island_undefined_without_p(self):
        ids = ["A", "B", "C", "D"]
        w = _weights(ids, [("A", "B"), ("B", "C")])
        res = autocorr.lisa(w, np.array([1.0, 2.0, 3.0, 4.0]), 99, 0.05, 0)
        r = {x.unit_id: x for x in res}
        assert r["D"].quadrant is Quadrant.UNDEFINED
        assert r["D"].p_value is None and not r["D"].significant

    def test_mean_local_equals_global(self, grid_weights):
        rng = np.random.default_rng(5)
        x = rng.normal(size=len(grid_weights))
        res = autocorr.lisa(grid_weights, x, 99, 0.05, 0)
        live = grid_weights.non_island_indices
        locals_ = np.array([res[i].local_i for i in live])
        assert locals_.mean() == pytest.approx(autocorr.morans_i(grid_weights, x), abs=1e-10)

    def test_p_values_within_bounds(self, grid_weights):
        rng = np.random.default_rng(6)
        x = rng.normal(size=len(grid_weights))
        m = 199
        res = autocorr.lisa(grid_weights, x, m, 0.05, 3)
        for r in res:
            if r.p_value is not None:
                assert 1 / (m + 1) <= r.p_value <= 1.0

    def test_quadrants_match_sign_pattern(self, grid_weights):
        rng = np.random.default_rng(8)
        x = rng.normal(size=len(grid_weights))
        res = autocorr.lisa(grid_weights, x, 99, 0.05, 2)
        for r in res:
            if r.quadrant is Quadrant.HIGH_HIGH:
                assert r.z > 0 and r.lag > 0
            elif r.quadrant is Quadrant.LOW_LOW:
                assert r.z < 0 and r.lag < 0
            elif r.quadrant is Quadrant.LOW_HIGH:
                assert r.z < 0 and r.lag > 0
            elif r.quadrant is Quadrant.HIGH_LOW:
                assert r.z > 0 and r.lag < 0

    def test_quadrants_invariant_under_positive_affine(self, grid_weights):
        rng = np.random.default_rng(9)
        x = rng.normal(size=len(grid_weights))
        a = autocorr.lisa(grid_weights, x, 99, 0.05, 4)
        b = autocorr.lisa(grid_weights, 0.25 * x + 100.0, 99, 0.05, 4)
        assert [r.quadrant for r in a] == [r.quadrant for r in b]

    def test_seed_determinism(self, grid_weights):
        rng = np.random.default_rng(10)
        x = rng.normal(size=len(grid_weights))
        a = autocorr.lisa(grid_weights, x, 199, 0.05, 42)
        b = autocorr.lisa(grid_weights, x, 199, 0.05, 42)
        assert a == b
        c = autocorr.lisa(grid_weights, x, 199, 0.05, 43)
        assert any(r1.p_value != r2.p_value for r1, r2 in zip(a, c))

    def test_validation_of_parameters(self, grid_weights):
        x = np.arange(len(grid_weights), dtype=float)
        with pytest.raises(GeovulnError):
            autocorr.lisa(grid_weights, x, 50, 0.05, 0)
        with pytest.raises(GeovulnError):
            autocorr.lisa(grid_weights, x, 99, 1.5, 0)

    def test_null_calibration_smoke(self, grid_weights):
        # The direction-conditional pseudo p picks its tail from the data, so
        # under an iid field it is calibrated against the folded uniform:
        # P(p <= t) ~= 2t, never materially beyond it.
        rng = np.random.default_rng(11)
        pooled = []
        for rep in range(10):
            x = rng.normal(size=len(grid_weights))
            res = autocorr.lisa(grid_weights, x, 199, 0.05, 100 + rep)
            pooled.extend(r.p_value for r in res if r.p_value is not None)
        pooled = np.array(pooled)
        assert (pooled <= 0.05).mean() <= 2 * 0.05 + 0.05
        assert (pooled <= 0.20).mean() <= 2 * 0.20 + 0.07


class TestStratify:
    def _res(self, uid, quadrant, significant=True):
        return autocorr.LisaResult(uid, 1.0, 1.0, 1.0, 0.01, quadrant, significant)

    def test_cross_labels(self):
        res = [
            self._res("A", Quadrant.HIGH_HIGH),
            self._res("B", Quadrant.LOW_LOW),
            self._res("C", Quadrant.LOW_HIGH),          # outlier, excluded
            self._res("D", Quadrant.HIGH_HIGH, False),  # not significant
        ]
        hazard = {"A": 0.2, "B": 0.05, "C": 0.3, "D": 0.3}
        out = autocorr.stratify(res, hazard)
        assert [(h.unit_id, h.base_class, h.hazard_macro) for h in out] == [
            ("A", Quadrant.HIGH_HIGH, "Severe"),
            ("B", Quadrant.LOW_LOW, "Mild"),
        ]

    def test_boundary_value_is_mild(self):
        out = autocorr.stratify([self._res("A", Quadrant.HIGH_HIGH)], {"A": 0.15})
        assert out[0].hazard_macro == "Mild"
