import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geovuln import ingest
from geovuln.errors import RowError, SchemaError


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


HEADER = ("unit_id,name,province_id,region_id,ag_max,ivsm,var_perc,eta_q3,pop,"
          "comp_pre1919,comp_1919_1945,comp_1946_1960,comp_1961_1970,comp_1971_1980,"
          "comp_1981_1990,comp_1991_2000,comp_2001_2005,comp_post2005")


def _row(uid="A", comp="0.111,0.111,0.111,0.111,0.111,0.111,0.111,0.111,0.112",
         ivsm="100", ag="0.1"):
    return f"{uid},Name,{uid[0]}P,{uid[0]}R,{ag},{ivsm},1.0,55,1000,{comp}"


class TestParse:
    def test_parses_synthetic_dataset(self, dataset, synth_dir):
        n = synth_dir["tables"]["unit_ids"].shape[0]
        assert len(dataset) == n
        assert list(dataset.unit_ids) == sorted(dataset.unit_ids)

    def test_shares_renormalized_to_exactly_one(self, tmp_path):
        comp = ",".join(["0.111"] * 9)  # sums to 0.999
        p = _write(tmp_path / "d.csv", HEADER + "\n" + _row(comp=comp) + "\n")
        ds = ingest.parse_dataset(p)
        assert np.asarray(ds.records[0].building_comp).sum() == pytest.approx(1.0, abs=1e-12)

    def test_missing_column_names_it(self, tmp_path):
        bad = HEADER.replace("ivsm", "something_else")
        p = _write(tmp_path / "d.csv", bad + "\n" + _row() + "\n")
        with pytest.raises(SchemaError, match="ivsm"):
            ingest.parse_dataset(p)

    def test_non_numeric_cell_reports_line(self, tmp_path):
        p = _write(tmp_path / "d.csv",
                   HEADER + "\n" + _row(uid="A") + "\n" + _row(uid="B", ivsm="oops") + "\n")
        with pytest.raises(RowError, match="line 3"):
            ingest.parse_dataset(p)

    def test_duplicate_unit_id_fatal(self, tmp_path):
        p = _write(tmp_path / "d.csv", HEADER + "\n" + _row("A") + "\n" + _row("A") + "\n")
        with pytest.raises(RowError, match="duplicate"):
            ingest.parse_dataset(p)

    def test_empty_mandatory_cell_rejected(self, tmp_path):
        p = _write(tmp_path / "d.csv", HEADER + "\n" + _row(ivsm="") + "\n")
        with pytest.raises(RowError, match="missing"):
            ingest.parse_dataset(p)

    def test_all_zero_composition_fatal(self, tmp_path):
        comp = ",".join(["0"] * 9)
        p = _write(tmp_path / "d.csv", HEADER + "\n" + _row(comp=comp) + "\n")
        with pytest.raises(RowError, match="zero"):
            ingest.parse_dataset(p)

    def test_semicolon_delimiter_autodetected(self, tmp_path):
        text = (HEADER.replace(",", ";") + "\n" + _row().replace(",", ";") + "\n")
        ds = ingest.parse_dataset(_write(tmp_path / "d.csv", text))
        assert len(ds) == 1

    def test_column_map_remaps_headers(self, tmp_path):
        text = HEADER.replace("ivsm", "IVSM_2011") + "\n" + _row() + "\n"
        ds = ingest.parse_dataset(_write(tmp_path / "d.csv", text), columns={"ivsm": "IVSM_2011"})
        assert ds.records[0].ivsm == 100.0

    def test_records_sorted_by_unit_id(self, tmp_path):
        p = _write(tmp_path / "d.csv", HEADER + "\n" + _row("B") + "\n" + _row("A") + "\n")
        ds = ingest.parse_dataset(p)
        assert [r.unit_id for r in ds.records] == ["A", "B"]

    def test_province_index_groups_units(self, dataset, synth_dir):
        t = synth_dir["tables"]
        for pid, uids in dataset.province_index.items():
            expected = sorted(t["unit_ids"][t["provinces"] == pid])
            assert list(uids) == expected


class TestRoundTrip:
    def test_parse_serialize_parse_is_identity(self, dataset, tmp_path):
        ind = tmp_path / "again.csv"
        ser = tmp_path / "series.csv"
        ingest.write_dataset_csv(dataset, ind)
        ingest.write_series_csv(dataset, ser)
        series = ingest.parse_population_series(ser)
        again = ingest.parse_dataset(ind, series=series)
        assert again.records == dataset.records
        assert again.dataset_digest == dataset.dataset_digest


class TestReplaceZeros:
    def test_multiplicative_replacement_frozen_example(self):
        comp = np.array([0.5, 0.5, 0, 0, 0, 0, 0, 0, 0])
        out = ingest.replace_zeros(comp, 1e-5)
        expect = np.array([0.5 * (1 - 7e-5), 0.5 * (1 - 7e-5)] + [1e-5] * 7)
        np.testing.assert_allclose(out, expect, rtol=0, atol=1e-18)
        assert out.sum() == pytest.approx(1.0, abs=1e-15)

    def test_strictly_positive_input_unchanged(self):
        comp = np.array([0.2, 0.3, 0.5])
        assert ingest.replace_zeros(comp, 1e-5) is comp or np.array_equal(
            ingest.replace_zeros(comp, 1e-5), comp)

    def test_all_zero_raises(self):
        with pytest.raises(ValueError):
            ingest.replace_zeros(np.zeros(9), 1e-5)

    @settings(deadline=None, max_examples=60)
    @given(st.lists(st.floats(1e-9, 1.0) | st.just(0.0), min_size=4, max_size=9),
           st.integers(0, 8))
    def test_nonzero_ratios_preserved(self, parts, zero_at):
        parts = np.asarray(parts)
        if parts.sum() == 0:
            parts[0] = 1.0
        parts = parts / parts.sum()
        parts[zero_at % parts.shape[0]] = 0.0
        if parts.sum() == 0:
            return
        parts = parts / parts.sum()
        out = ingest.replace_zeros(parts, 1e-6)
        nz = parts > 0
        ratio = out[nz] / parts[nz]
        np.testing.assert_allclose(ratio, ratio[0], rtol=1e-12)

    def test_column_deltas_use_column_minimum(self):
        rows = np.array([[0.5, 0.5, 0.0], [0.25, 0.5, 0.25], [0.1, 0.8, 0.1]])
        deltas = ingest._column_deltas(rows, 0.65)
        np.testing.assert_allclose(deltas, 0.65 * np.array([0.1, 0.5, 0.1]))

    def test_closure_idempotent(self):
        v = np.array([3.0, 1.0, 1.0])
        once = ingest.closure(v)
        np.testing.assert_array_equal(once, ingest.closure(once))


class TestValidate:
    def _record(self, **kw):
        base = dict(
            unit_id="A", name="x", province_id="P", region_id="R",
            ag_max=0.1, ivsm=100.0, var_perc=0.0, eta_q3=55.0, pop=10.0,
            building_comp=tuple(np.full(9, 1 / 9)),
            pop_series=tuple(float(v) for v in range(100, 121)),
        )
        base.update(kw)
        return ingest.MunicipalityRecord(**base)

    def test_clean_dataset_empty_report(self):
        ds = ingest.build_dataset([self._record()])
        assert ingest.validate(ds).is_empty

    def test_ivsm_out_of_range_flagged(self):
        ds = ingest.build_dataset([self._record(ivsm=150.0)])
        rep = ingest.validate(ds)
        assert any(f.field == "ivsm" and "150" in f.message for f in rep.findings)

    def test_negative_ag_max_flagged(self):
        ds = ingest.build_dataset([self._record(ag_max=-0.1)])
        assert any(f.field == "ag_max" for f in ingest.validate(ds).findings)

    def test_short_pop_series_flagged(self):
        ds = ingest.build_dataset([self._record(pop_series=tuple(float(v) for v in range(20)))])
        rep = ingest.validate(ds)
        assert any(f.field == "pop_series" and "20" in f.message for f in rep.findings)

    def test_missing_pop_series_flagged(self):
        ds = ingest.build_dataset([self._record(pop_series=None)])
        assert any(f.field == "pop_series" for f in ingest.validate(ds).findings)

    def test_validate_never_mutates(self, dataset):
        before = dataset.records
        ingest.validate(dataset)
        assert dataset.records is before


class TestSeries:
    def test_series_parse_and_merge(self, dataset):
        rec = dataset.records[0]
        assert rec.pop_series is not None and len(rec.pop_series) == 21

    def test_incomplete_series_skipped(self, tmp_path):
        lines = ["unit_id,year,population"] + [f"A,{y},100" for y in range(1992, 2000)]
        p = _write(tmp_path / "s.csv", "\n".join(lines) + "\n")
        assert ingest.parse_population_series(p) == {}

    def test_nonpositive_series_skipped(self, tmp_path):
        lines = ["unit_id,year,population"] + [f"A,{y},100" for y in range(1992, 2013)]
        lines[3] = "A,1994,0"
        p = _write(tmp_path / "s.csv", "\n".join(lines) + "\n")
        assert ingest.parse_population_series(p) == {}
