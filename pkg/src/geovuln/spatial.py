"""Contiguity-based spatial weights and spatial lags.

Weights follow the usual row-standardized contiguity convention: w_ij = 1/n_i
when units i and j share a border and 0 otherwise, so each non-island row
sums to 1 exactly.  Units without neighbors (islands) are kept and flagged;
their lag is undefined and is reported as NaN, never as a number that could
be mistaken for data.
"""

import json
import logging
import os
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import GeovulnError

log = logging.getLogger("geovuln")

DEFAULT_SNAP_TOLERANCE = 1e-8  # degrees


@dataclass(frozen=True)
class SpatialWeights:
    unit_ids: tuple
    neighbors: tuple  # per unit, sorted array of neighbor indices
    island_flags: np.ndarray = field(compare=False)

    def __len__(self):
        return len(self.unit_ids)

    @cached_property
    def n_neighbors(self):
        return np.array([len(nb) for nb in self.neighbors], dtype=np.int64)

    @cached_property
    def weights(self):
        """Per-unit weight arrays, 1/n_i on every edge."""
        return tuple(
            np.full(len(nb), 1.0 / len(nb)) if len(nb) else np.empty(0)
            for nb in self.neighbors
        )

    @cached_property
    def non_island_indices(self):
        return np.flatnonzero(~self.island_flags)


def build_weights(ds, adjacency_pairs):
    """Row-standardized contiguity weights from an unordered pair list.

    Every id must exist in the dataset; self-pairs are rejected.  Units that
    appear in no pair become islands.
    """
    ids = tuple(ds.unit_ids)
    index = {u: i for i, u in enumerate(ids)}
    n = len(ids)
    neighbor_sets = [set() for _ in range(n)]
    for a, b in adjacency_pairs:
        a, b = str(a), str(b)
        if a == b:
            raise GeovulnError(f"self-loop adjacency pair ({a},{b})")
        if a not in index:
            raise GeovulnError(f"adjacency pair ({a},{b}) references unknown unit '{a}'")
        if b not in index:
            raise GeovulnError(f"adjacency pair ({a},{b}) references unknown unit '{b}'")
        ia, ib = index[a], index[b]
        neighbor_sets[ia].add(ib)
        neighbor_sets[ib].add(ia)
    neighbors = tuple(np.array(sorted(s), dtype=np.int64) for s in neighbor_sets)
    islands = np.array([len(s) == 0 for s in neighbor_sets], dtype=bool)
    if islands.any():
        log.info("%d island unit(s) without neighbors", int(islands.sum()))
    return SpatialWeights(unit_ids=ids, neighbors=neighbors, island_flags=islands)


def _snap(coord, tol):
    return (round(coord[0] / tol), round(coord[1] / tol))


def _feature_rings(geometry):
    gtype = geometry.get("type")
    coords = geometry.get("coordinates")
    if gtype == "Polygon":
        polys = [coords]
    elif gtype == "MultiPolygon":
        polys = coords
    else:
        raise ValueError(f"unsupported geometry type {gtype!r}")
    rings = []
    for poly in polys:
        for ring in poly:
            if not isinstance(ring, list) or len(ring) < 4:
                raise ValueError("degenerate ring")
            rings.append(ring)
    return rings


def contiguity_from_polygons(geometry, id_property="unit_id", snap_tolerance=DEFAULT_SNAP_TOLERANCE,
                             rook=False, known_ids=None):
    """Adjacency pairs from a JSON feature collection of polygons.

    Two units are contiguous when their boundaries share at least one snapped
    vertex (queen rule) or, with ``rook=True``, at least one snapped edge.
    Coordinates are snapped to a grid of step ``snap_tolerance`` before
    hashing, so boundaries digitized with tiny numeric noise still match.

    ``geometry`` is a path or an already-parsed feature collection.  When
    ``known_ids`` is given, features whose id is not in it are reported and
    excluded.  Invalid features are skipped with a warning.  Returns
    ``(pairs, report)`` where report lists skipped/unmatched feature ids.
    """
    if isinstance(geometry, (str, bytes, os.PathLike)):
        with open(geometry, "r", encoding="utf-8") as fh:
            geometry = json.load(fh)
    features = geometry.get("features")
    if features is None:
        raise GeovulnError("geometry input is not a feature collection")

    shared = {}  # snapped vertex or edge -> set of unit ids
    report = {"invalid": [], "unmatched": []}
    seen_ids = set()
    for feat in features:
        props = feat.get("properties") or {}
        uid = props.get(id_property)
        if uid is None:
            report["invalid"].append("<missing id>")
            log.warning("feature without '%s' property skipped", id_property)
            continue
        uid = str(uid)
        if known_ids is not None and uid not in known_ids:
            report["unmatched"].append(uid)
            continue
        try:
            rings = _feature_rings(feat.get("geometry") or {})
        except ValueError as exc:
            report["invalid"].append(uid)
            log.warning("invalid geometry for %s skipped: %s", uid, exc)
            continue
        seen_ids.add(uid)
        for ring in rings:
            snapped = [_snap(c, snap_tolerance) for c in ring]
            if rook:
                for a, b in zip(snapped[:-1], snapped[1:]):
                    if a == b:
                        continue
                    key = (a, b) if a <= b else (b, a)
                    shared.setdefault(key, set()).add(uid)
            else:
                for v in snapped:
                    shared.setdefault(v, set()).add(uid)

    pairs = set()
    for units in shared.values():
        if len(units) < 2:
            continue
        units = sorted(units)
        for i in range(len(units)):
            for j in range(i + 1, len(units)):
                pairs.add((units[i], units[j]))
    if known_ids is not None:
        missing = sorted(set(known_ids) - seen_ids)
        if missing:
            report["missing_geometry"] = missing
    return sorted(pairs), report


def spatial_lag(w, values):
    """Row-standardized weighted average over each unit's neighbors.

    Islands get NaN.  ``values`` must align with ``w.unit_ids``.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (len(w),):
        raise GeovulnError(f"field length {values.shape} does not match unit count {len(w)}")
    lag = np.full(len(w), np.nan)
    for i, nb in enumerate(w.neighbors):
        if len(nb):
            lag[i] = values[nb].sum() / len(nb)
    return lag


def read_adjacency_pairs(path):
    """Two-column delimited adjacency file ``id_a,id_b`` (or semicolons)."""
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
        delim = ";" if first.count(";") > first.count(",") else ","
        fh.seek(0)
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            cells = [c.strip() for c in line.split(delim)]
            if line_no == 1 and not _looks_like_pair(cells):
                continue  # header row
            if len(cells) < 2:
                raise GeovulnError(f"{path}:{line_no}: expected two ids per line")
            pairs.append((cells[0], cells[1]))
    return pairs


def _looks_like_pair(cells):
    return len(cells) >= 2 and cells[0].lower() not in ("id_a", "ida", "source", "from")
