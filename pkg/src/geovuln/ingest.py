"""Parsing, validation, and normalization of the indicator dataset.

The indicator file is UTF-8 delimited text (comma or semicolon, auto
detected) with a header row.  A column map (field name -> file column) lets
the same parser read differently-labelled extracts; fields not remapped are
looked up under their canonical names.  Records are kept in ascending
``unit_id`` order so that every downstream permutation stream is
reproducible, and the dataset is immutable after construction.
"""

import csv
import hashlib
import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import RowError, SchemaError

log = logging.getLogger("geovuln")

#: time-of-construction classes of the building stock, oldest first
BUILDING_CLASSES = (
    "<1919", "1919-45", "1946-60", "1961-70", "1971-80",
    "1981-90", "1991-2000", "2001-05", ">2005",
)

#: canonical column names for the nine composition shares
COMP_FIELDS = (
    "comp_pre1919", "comp_1919_1945", "comp_1946_1960", "comp_1961_1970",
    "comp_1971_1980", "comp_1981_1990", "comp_1991_2000", "comp_2001_2005",
    "comp_post2005",
)

STRING_FIELDS = ("unit_id", "name", "province_id", "region_id")
NUMERIC_FIELDS = ("ag_max", "ivsm", "var_perc", "eta_q3", "pop")

SERIES_YEARS = tuple(range(1992, 2013))  # 21 yearly observations

#: multiplier applied to the column-minimum nonzero share when imputing zeros
DEFAULT_DELTA_FACTOR = 0.65

IVSM_RANGE = (70.0, 130.0)


@dataclass(frozen=True)
class MunicipalityRecord:
    unit_id: str
    name: str
    province_id: str
    region_id: str
    ag_max: float
    ivsm: float
    var_perc: float
    eta_q3: float
    pop: float
    building_comp: tuple  # 9 strictly positive shares summing to 1
    pop_series: tuple | None = None  # 21 yearly populations, optional


@dataclass(frozen=True)
class Dataset:
    records: tuple
    province_index: dict = field(compare=False)
    dataset_digest: str = field(compare=False)

    def __len__(self):
        return len(self.records)

    @cached_property
    def unit_ids(self):
        return np.array([r.unit_id for r in self.records])

    @cached_property
    def index_of(self):
        return {r.unit_id: i for i, r in enumerate(self.records)}

    def column(self, name):
        """Numeric column as a float array, in record order."""
        return np.array([getattr(r, name) for r in self.records], dtype=np.float64)

    @cached_property
    def compositions(self):
        return np.array([r.building_comp for r in self.records], dtype=np.float64)


def closure(parts):
    """Rescale nonnegative parts to sum to 1."""
    parts = np.asarray(parts, dtype=np.float64)
    total = parts.sum()
    if total <= 0:
        raise ValueError("cannot close a vector with nonpositive total")
    return parts / total


def normalize_shares(parts, tol=1e-9):
    """Closure that leaves already-normalized input untouched.

    The tolerance gate makes renormalization idempotent bitwise, so a
    parse -> serialize -> parse round trip is an identity.
    """
    parts = np.asarray(parts, dtype=np.float64)
    if abs(parts.sum() - 1.0) <= tol:
        return parts
    return closure(parts)


def replace_zeros(comp, delta):
    """Multiplicative zero replacement on one composition.

    Zeros become ``delta`` (scalar, or one value per part); the nonzero parts
    are scaled down by the total imputed mass so the result still sums to 1.
    A strictly positive input is returned unchanged.
    """
    comp = np.asarray(comp, dtype=np.float64)
    if (comp < 0).any():
        raise ValueError("composition has negative parts")
    zero = comp == 0.0
    if not zero.any():
        return comp
    if zero.all():
        raise ValueError("all-zero composition cannot be replaced")
    delta = np.broadcast_to(np.asarray(delta, dtype=np.float64), comp.shape)
    if (delta[zero] <= 0).any():
        raise ValueError("replacement delta must be positive")
    imputed = delta[zero].sum()
    out = comp * ((1.0 - imputed) / comp[~zero].sum())
    out = np.where(zero, delta, out)
    return out


def _column_deltas(rows, delta_factor):
    """Per-column replacement values: delta_factor x smallest nonzero share.

    A column that is zero everywhere falls back to the smallest nonzero share
    found anywhere in the matrix.
    """
    rows = np.asarray(rows, dtype=np.float64)
    masked = np.where(rows > 0, rows, np.inf)
    col_min = masked.min(axis=0)
    overall = masked.min()
    if not np.isfinite(overall):
        raise ValueError("no nonzero shares in the dataset")
    col_min = np.where(np.isfinite(col_min), col_min, overall)
    return delta_factor * col_min


def default_column_map():
    fields = STRING_FIELDS + NUMERIC_FIELDS + COMP_FIELDS
    return {f: f for f in fields}


def _detect_delimiter(header_line):
    return ";" if header_line.count(";") > header_line.count(",") else ","


def _parse_float(raw, line_no, column):
    raw = raw.strip()
    if raw == "":
        raise RowError(line_no, f"column '{column}' is empty (missing value)")
    try:
        return float(raw)
    except ValueError:
        raise RowError(line_no, f"column '{column}': could not parse '{raw}' as a number") from None


def parse_dataset(path, columns=None, delta_factor=DEFAULT_DELTA_FACTOR, series=None):
    """Parse the indicator file into a :class:`Dataset`.

    ``columns`` maps canonical field names to the file's column headers (only
    remapped fields need to appear).  ``series`` is an optional mapping
    ``unit_id -> 21 yearly populations`` merged into the records.  Composition
    shares are renormalized to sum to 1 and zeros are imputed
    multiplicatively with per-column deltas (``delta_factor`` x column-minimum
    nonzero share).
    """
    column_map = default_column_map()
    if columns:
        unknown = set(columns) - set(column_map)
        if unknown:
            raise SchemaError(f"unknown field(s) in column map: {sorted(unknown)}")
        column_map.update(columns)

    with open(path, "r", encoding="utf-8", newline="") as fh:
        first = fh.readline()
        if first == "":
            raise SchemaError(f"{path}: empty file")
        delim = _detect_delimiter(first)
        fh.seek(0)
        reader = csv.reader(fh, delimiter=delim)
        header = [h.strip() for h in next(reader)]
        col_idx = {}
        missing = []
        for fieldname, colname in column_map.items():
            if colname in header:
                col_idx[fieldname] = header.index(colname)
            else:
                missing.append(colname)
        if missing:
            raise SchemaError(f"{path}: missing column(s): {', '.join(sorted(missing))}")

        raw_records = []
        raw_comps = []
        seen = {}
        for line_no, row in enumerate(reader, start=2):
            if not row or all(c.strip() == "" for c in row):
                continue
            if len(row) < len(header):
                raise RowError(line_no, f"expected {len(header)} cells, found {len(row)}")
            strings = {}
            for f in STRING_FIELDS:
                v = row[col_idx[f]].strip()
                if v == "" and f != "name":
                    raise RowError(line_no, f"column '{column_map[f]}' is empty (missing value)")
                strings[f] = v
            uid = strings["unit_id"]
            if uid in seen:
                raise RowError(line_no, f"duplicate unit_id '{uid}' (first seen on line {seen[uid]})")
            seen[uid] = line_no
            numbers = {f: _parse_float(row[col_idx[f]], line_no, column_map[f]) for f in NUMERIC_FIELDS}
            comp = np.array(
                [_parse_float(row[col_idx[f]], line_no, column_map[f]) for f in COMP_FIELDS]
            )
            if (comp < 0).any():
                raise RowError(line_no, "negative building-stock share")
            if comp.sum() <= 0:
                raise RowError(line_no, "building-stock shares are all zero")
            raw_comps.append(normalize_shares(comp))
            raw_records.append((strings, numbers))

    if not raw_records:
        raise SchemaError(f"{path}: no data rows")

    comps = np.array(raw_comps)
    deltas = _column_deltas(comps, delta_factor)

    records = []
    for (strings, numbers), comp in zip(raw_records, comps):
        comp = replace_zeros(comp, deltas)
        pop_series = None
        if series is not None and strings["unit_id"] in series:
            pop_series = tuple(float(v) for v in series[strings["unit_id"]])
        records.append(
            MunicipalityRecord(
                unit_id=strings["unit_id"],
                name=strings["name"],
                province_id=strings["province_id"],
                region_id=strings["region_id"],
                ag_max=numbers["ag_max"],
                ivsm=numbers["ivsm"],
                var_perc=numbers["var_perc"],
                eta_q3=numbers["eta_q3"],
                pop=numbers["pop"],
                building_comp=tuple(float(v) for v in comp),
                pop_series=pop_series,
            )
        )
    ds = build_dataset(records)
    log.info("parsed %d records from %s", len(ds), path)
    return ds


def build_dataset(records):
    """Assemble a Dataset from records: canonical order, index, digest."""
    records = tuple(sorted(records, key=lambda r: r.unit_id))
    province_index = {}
    for r in records:
        province_index.setdefault(r.province_id, []).append(r.unit_id)
    province_index = {k: tuple(v) for k, v in sorted(province_index.items())}
    digest = hashlib.sha256()
    for r in records:
        digest.update(repr(r).encode("utf-8"))
    return Dataset(records=records, province_index=province_index, dataset_digest=digest.hexdigest())


def parse_population_series(path, columns=None):
    """Parse a long-format (unit_id, year, population) series file.

    Returns ``unit_id -> tuple of 21 yearly populations``.  Units with an
    incomplete year range or nonpositive counts are skipped with a warning.
    """
    colmap = {"unit_id": "unit_id", "year": "year", "population": "population"}
    if columns:
        colmap.update({k: v for k, v in columns.items() if k in colmap})
    per_unit = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        first = fh.readline()
        if first == "":
            raise SchemaError(f"{path}: empty file")
        delim = _detect_delimiter(first)
        fh.seek(0)
        reader = csv.reader(fh, delimiter=delim)
        header = [h.strip() for h in next(reader)]
        missing = [c for c in colmap.values() if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s): {', '.join(sorted(missing))}")
        iu, iy, ip = (header.index(colmap[k]) for k in ("unit_id", "year", "population"))
        for line_no, row in enumerate(reader, start=2):
            if not row or all(c.strip() == "" for c in row):
                continue
            uid = row[iu].strip()
            year = int(_parse_float(row[iy], line_no, colmap["year"]))
            popv = _parse_float(row[ip], line_no, colmap["population"])
            per_unit.setdefault(uid, {})[year] = popv

    series = {}
    skipped = 0
    for uid, by_year in per_unit.items():
        if set(by_year) != set(SERIES_YEARS):
            skipped += 1
            log.warning("population series for %s does not cover 1992-2012; skipped", uid)
            continue
        values = tuple(by_year[y] for y in SERIES_YEARS)
        if min(values) <= 0:
            skipped += 1
            log.warning("population series for %s has nonpositive counts; skipped", uid)
            continue
        series[uid] = values
    if skipped:
        log.warning("skipped %d unusable population series", skipped)
    return series


@dataclass(frozen=True)
class Finding:
    unit_id: str
    field: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    n_records: int
    findings: tuple

    @property
    def is_empty(self):
        return len(self.findings) == 0

    def to_dict(self):
        return {
            "n_records": self.n_records,
            "n_findings": len(self.findings),
            "findings": [
                {"unit_id": f.unit_id, "field": f.field, "message": f.message}
                for f in self.findings
            ],
        }


def validate(ds):
    """Report-only integrity check of a dataset; never mutates."""
    findings = []
    lo, hi = IVSM_RANGE
    for r in ds.records:
        if not (lo < r.ivsm < hi):
            findings.append(Finding(r.unit_id, "ivsm", f"ivsm={r.ivsm!r} out of ({lo:g},{hi:g})"))
        if r.ag_max < 0:
            findings.append(Finding(r.unit_id, "ag_max", f"negative ag_max={r.ag_max!r}"))
        if r.pop < 0:
            findings.append(Finding(r.unit_id, "pop", f"negative population {r.pop!r}"))
        comp = np.asarray(r.building_comp)
        if comp.shape != (9,):
            findings.append(Finding(r.unit_id, "building_comp", f"{comp.shape[0]} shares, expected 9"))
        elif (comp <= 0).any():
            findings.append(Finding(r.unit_id, "building_comp", "nonpositive share after replacement"))
        elif abs(comp.sum() - 1.0) > 1e-9:
            findings.append(Finding(r.unit_id, "building_comp", f"shares sum to {comp.sum()!r}"))
        if r.pop_series is None:
            findings.append(Finding(r.unit_id, "pop_series", "missing population series"))
        elif len(r.pop_series) != 21:
            findings.append(
                Finding(r.unit_id, "pop_series", f"{len(r.pop_series)} entries, expected 21")
            )
        elif min(r.pop_series) <= 0:
            findings.append(Finding(r.unit_id, "pop_series", "nonpositive population count"))
    return ValidationReport(n_records=len(ds), findings=tuple(findings))


def write_dataset_csv(ds, path):
    """Serialize the internal model back to canonical delimited text."""
    fields = STRING_FIELDS + NUMERIC_FIELDS + COMP_FIELDS
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter=",", lineterminator="\n")
        writer.writerow(fields)
        for r in ds.records:
            row = [r.unit_id, r.name, r.province_id, r.region_id]
            row += [repr(float(getattr(r, f))) for f in NUMERIC_FIELDS]
            row += [repr(float(v)) for v in r.building_comp]
            writer.writerow(row)


def write_series_csv(ds, path):
    """Serialize the per-unit population series in long format."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter=",", lineterminator="\n")
        writer.writerow(["unit_id", "year", "population"])
        for r in ds.records:
            if r.pop_series is None:
                continue
            for year, v in zip(SERIES_YEARS, r.pop_series):
                writer.writerow([r.unit_id, year, repr(v)])
