"""Command-line pipeline: configuration, orchestration, artifact writing.

Configuration is plain ``key = value`` text; every parameter is echoed into
``run_manifest.txt`` next to the outputs, together with the dataset digest,
the kernel backend, and the effective thread count, so any run can be
reproduced bit-for-bit.  All delimited outputs use '.' as the decimal
separator and the fixed column orders documented in ``docs/formats.md``.
"""

import csv
import json
import logging
import math
from pathlib import Path

import click
import numpy as np

from . import _kernels, autocorr, coda, distributional, fda, ingest, ranking, spatial
from .errors import ConfigError, GeovulnError

log = logging.getLogger("geovuln")

DEFAULTS = {
    "indicators": None,
    "adjacency": None,
    "geometry": None,
    "series": None,
    "out": "out",
    "seed": 42,
    "permutations": 999,
    "permanova_permutations": 1000,
    "alpha": 0.05,
    "quantile_type": "linear",
    "rook": False,
    "on_smoothed": False,
    "classes": 9,
    "k_clusters": 4,
    "bandwidth": distributional.DEFAULT_BANDWIDTH,
    "grid_size": distributional.DEFAULT_GRID_SIZE,
    "delta_factor": ingest.DEFAULT_DELTA_FACTOR,
    "threads": 0,
    "id_property": "unit_id",
    "snap_tolerance": spatial.DEFAULT_SNAP_TOLERANCE,
    "copeland_method": "fast",
}

_INT_KEYS = {"seed", "permutations", "permanova_permutations", "classes",
             "k_clusters", "grid_size", "threads"}
_FLOAT_KEYS = {"alpha", "bandwidth", "delta_factor", "snap_tolerance"}
_BOOL_KEYS = {"rook", "on_smoothed"}

LISA_FIELDS = ("ivsm", "var_perc", "eta_q3", "ag_max", "pc1")


def load_config(path):
    """Parse a plain key = value configuration file."""
    raw = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected 'key = value'")
            key, _, value = line.partition("=")
            raw[key.strip()] = value.strip()
    return raw


def _coerce(key, value):
    if value is None:
        return None
    if key in _INT_KEYS:
        return int(value)
    if key in _FLOAT_KEYS:
        return float(value)
    if key in _BOOL_KEYS:
        if isinstance(value, bool):
            return value
        return str(value).strip().lower() in ("1", "true", "yes", "on")
    return value


def make_settings(config_path=None, **overrides):
    """Defaults, then config file, then explicit flag overrides."""
    settings = dict(DEFAULTS)
    settings["columns"] = {}
    settings["series_columns"] = {}
    if config_path:
        for key, value in load_config(config_path).items():
            if key.startswith("col."):
                settings["columns"][key[4:]] = value
            elif key.startswith("series_col."):
                settings["series_columns"][key[11:]] = value
            elif key in DEFAULTS:
                settings[key] = _coerce(key, value)
            else:
                raise ConfigError(f"unknown configuration key '{key}'")
    for key, value in overrides.items():
        if value is not None:
            settings[key] = _coerce(key, value)
    return settings


# ---------------------------------------------------------------------------
# stable output formatting
# ---------------------------------------------------------------------------

def _fmt_cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return ""
        return repr(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt_cell(c) for c in row])


def _sanitize(obj):
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_sanitize(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "Infinity" if v > 0 else "-Infinity"
        return v
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        json.dump(_sanitize(obj), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def write_manifest(outdir, settings, dataset_digest=None, stages=None, effective_threads=None):
    lines = []
    for key in sorted(settings):
        if key in ("columns", "series_columns"):
            prefix = "col." if key == "columns" else "series_col."
            for f, c in sorted(settings[key].items()):
                lines.append(f"{prefix}{f} = {c}")
        else:
            lines.append(f"{key} = {settings[key]}")
    lines.append(f"backend = {_kernels.backend()}")
    if effective_threads is not None:
        lines.append(f"effective_threads = {effective_threads}")
    if dataset_digest is not None:
        lines.append(f"dataset_digest = {dataset_digest}")
    for name, status in (stages or []):
        lines.append(f"stage.{name} = {status}")
    (Path(outdir) / "run_manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# shared loading helpers
# ---------------------------------------------------------------------------

def _outdir(settings):
    out = Path(settings["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def load_dataset(settings):
    if not settings.get("indicators"):
        raise ConfigError("no indicator file configured (key 'indicators' or --indicators)")
    series = None
    if settings.get("series"):
        series = ingest.parse_population_series(settings["series"], settings.get("series_columns"))
    return ingest.parse_dataset(
        settings["indicators"],
        columns=settings.get("columns"),
        delta_factor=settings["delta_factor"],
        series=series,
    )


def load_weights(settings, ds):
    if settings.get("adjacency"):
        pairs = spatial.read_adjacency_pairs(settings["adjacency"])
    elif settings.get("geometry"):
        pairs, report = spatial.contiguity_from_polygons(
            settings["geometry"],
            id_property=settings["id_property"],
            snap_tolerance=settings["snap_tolerance"],
            rook=settings["rook"],
            known_ids=set(ds.unit_ids.tolist()),
        )
        if report["unmatched"]:
            log.warning("%d geometry feature(s) not in the dataset", len(report["unmatched"]))
    else:
        raise ConfigError("no adjacency or geometry configured")
    return spatial.build_weights(ds, pairs)


def pc1_scores(ds, classes, delta_factor, use_correlation=False):
    """Building-stock first-component scores on 9 or 3 time classes."""
    comps = ds.compositions
    if classes == 3:
        comps = coda.aggregate_ternary(comps)
        deltas = ingest._column_deltas(comps, delta_factor)
        comps = np.array([ingest.replace_zeros(c, deltas) for c in comps])
        labels = coda.TERNARY_CLASSES
    elif classes == 9:
        labels = ingest.BUILDING_CLASSES
    else:
        raise ConfigError("classes must be 9 or 3")
    res = coda.coda_pca(comps, part_labels=labels, use_correlation=use_correlation)
    return res.scores[:, 0], res


def field_values(ds, settings, field):
    if field == "pc1":
        scores, _ = pc1_scores(ds, settings["classes"], settings["delta_factor"])
        return scores
    if field not in LISA_FIELDS:
        raise ConfigError(f"unknown field '{field}'; choose from {LISA_FIELDS}")
    return ds.column(field)


# ---------------------------------------------------------------------------
# stage implementations (shared by subcommands and the pipeline)
# ---------------------------------------------------------------------------

def stage_validate(settings, ds, outdir):
    report = ingest.validate(ds)
    write_json(outdir / "validation.json", report.to_dict())
    return report


def stage_weights(settings, ds, outdir):
    w = load_weights(settings, ds)
    rows = []
    for i, uid in enumerate(w.unit_ids):
        for j, wt in zip(w.neighbors[i], w.weights[i]):
            rows.append((uid, w.unit_ids[j], wt))
    write_csv(outdir / "weights.csv", ["unit_id", "neighbor_id", "weight"], rows)
    islands = [w.unit_ids[i] for i in np.flatnonzero(w.island_flags)]
    write_json(outdir / "weights_summary.json", {
        "n_units": len(w),
        "n_directed_edges": int(w.n_neighbors.sum()),
        "n_islands": len(islands),
        "islands": islands,
        "contiguity": "rook" if settings["rook"] else "queen",
    })
    return w


def stage_lisa(settings, ds, w, field, outdir):
    values = field_values(ds, settings, field)
    results = autocorr.lisa(w, values, settings["permutations"], settings["alpha"], settings["seed"])
    moran = autocorr.morans_i(w, values)
    write_csv(
        outdir / f"lisa_{field}.csv",
        ["unit_id", "z", "lag", "local_i", "p_value", "quadrant", "significant"],
        [(r.unit_id, r.z, r.lag, r.local_i, r.p_value, r.quadrant.value, r.significant)
         for r in results],
    )
    hazard = {r.unit_id: r.ag_max for r in ds.records}
    hotspots = autocorr.stratify(results, hazard)
    write_csv(
        outdir / f"hotspots_{field}.csv",
        ["unit_id", "base_class", "hazard_macro"],
        [(h.unit_id, h.base_class.value, h.hazard_macro) for h in hotspots],
    )
    write_json(outdir / f"lisa_{field}.json", {
        "field": field,
        "morans_i": moran,
        "permutations": settings["permutations"],
        "alpha": settings["alpha"],
        "seed": settings["seed"],
        "p_value_rule": "one-sided on the side of the observed lag, (R+1)/(M+1)",
        "n_significant": sum(1 for r in results if r.significant),
        "n_islands": int(w.island_flags.sum()),
    })
    return results, moran


def stage_coda_pca(settings, ds, classes, outdir, use_correlation=False):
    scores, res = pc1_scores(ds, classes, settings["delta_factor"], use_correlation)
    header = ["unit_id"] + [f"pc{k+1}_score" for k in range(res.scores.shape[1])]
    rows = [[uid] + list(res.scores[i]) for i, uid in enumerate(ds.unit_ids)]
    write_csv(outdir / f"coda_pca_{classes}.csv", header, rows)
    write_json(outdir / f"coda_pca_{classes}.json", {
        "classes": classes,
        "part_labels": list(res.part_labels),
        "explained": res.explained,
        "sdev": res.sdev,
        "center": res.center,
        "loadings": res.loadings.T,
        "degenerate": res.degenerate,
    })
    return scores, res


def stage_permanova(settings, ds, outdir):
    classes = ranking.hazard_classes(ds.column("ag_max"))
    groups = np.array([c.value for c in classes])
    res = coda.permanova(ds.compositions, groups,
                         settings["permanova_permutations"], settings["seed"])
    write_json(outdir / "permanova.json", {
        "f0": res.f0,
        "p_value": res.p_value,
        "ss_t": res.ss_t,
        "ss_w": res.ss_w,
        "group_sizes": res.group_sizes,
        "m_permutations": res.m_permutations,
        "note": res.note,
    })
    return res


def stage_thresholds(settings, ds, scores, outdir):
    th = ranking.compute_thresholds(ds.column("ivsm"), ds.column("var_perc"),
                                    scores, settings["quantile_type"])
    write_json(outdir / "thresholds.json", {
        "t_ivsm": th.t_ivsm,
        "t_g": th.t_g,
        "t_b": th.t_b,
        "quantile_method": th.quantile_method,
    })
    return th


def stage_select(settings, ds, scores, th, outdir):
    ivsm = ds.column("ivsm")
    var_perc = ds.column("var_perc")
    mask, expected, sd = ranking.select(ivsm, var_perc, scores, th)
    classes = ranking.hazard_classes(ds.column("ag_max"))
    selected_classes = classes[mask]
    shares = {}
    n_sel = int(mask.sum())
    for c in ranking.HazardClass:
        cnt = int((selected_classes == c).sum())
        if n_sel:
            shares[c.value] = cnt / n_sel
    rows = [
        (uid, ivsm[i], var_perc[i], scores[i], classes[i].value)
        for i, uid in enumerate(ds.unit_ids) if mask[i]
    ]
    write_csv(outdir / "selected.csv",
              ["unit_id", "ivsm", "var_perc", "pc1_score", "hazard_class"], rows)
    write_json(outdir / "selection.json", {
        "n_selected": n_sel,
        "n_total": len(ds),
        "expected_under_independence": expected,
        "expected_sd": sd,
        "class_shares": shares,
        "thresholds": {"t_ivsm": th.t_ivsm, "t_g": th.t_g, "t_b": th.t_b},
    })
    return mask


def stage_rank(settings, ds, scores, outdir):
    r1, r2, r3 = ranking.indicator_rankings(
        ds.column("ivsm"), ds.column("var_perc"), scores, ds.column("pop"), ds.unit_ids
    )
    c = ranking.copeland(r1, r2, r3, method=settings["copeland_method"])
    write_csv(outdir / "ranks.csv",
              ["unit_id", "rank_ivsm", "rank_var_perc", "rank_pc1", "copeland"],
              zip(ds.unit_ids, r1, r2, r3, c))
    classes = ranking.hazard_classes(ds.column("ag_max"))
    byh = ranking.score_by_hazard(c, classes)
    write_json(outdir / "copeland_by_hazard.json", byh)
    # plot-ready table: indicators against the hazard landscape
    ag, ivsm = ds.column("ag_max"), ds.column("ivsm")
    var_perc, eta_q3, pop = ds.column("var_perc"), ds.column("eta_q3"), ds.column("pop")
    write_csv(
        outdir / "scatter_data.csv",
        ["unit_id", "ag_max", "hazard_class", "ivsm", "var_perc", "eta_q3",
         "log10_pop", "pc1_score", "copeland"],
        [
            (uid, ag[i], classes[i].value, ivsm[i], var_perc[i], eta_q3[i],
             math.log10(pop[i]) if pop[i] > 0 else None, scores[i], c[i])
            for i, uid in enumerate(ds.unit_ids)
        ],
    )
    return c


def stage_fpca(settings, ds, outdir):
    curves = fda.log_growth(ds)
    if len(curves) < 2:
        raise GeovulnError("fewer than 2 usable population series")
    raw = np.array([c.log_growth for c in curves])
    smoothed, _coefs = fda.smooth_bspline_batch(raw)
    res = fda.fpca(smoothed)
    ids = [c.unit_id for c in curves]
    header = ["unit_id"] + [f"pc{k+1}_score" for k in range(res.scores.shape[1])]
    write_csv(outdir / "fpca_scores.csv", header,
              [[uid] + list(res.scores[i]) for i, uid in enumerate(ids)])
    var_perc = {r.unit_id: r.var_perc for r in ds.records}
    vp = np.array([var_perc[u] for u in ids])
    s1 = res.scores[:, 0]
    corr = None
    if s1.std() > 0 and vp.std() > 0:
        corr = float(np.corrcoef(s1, vp)[0, 1])
    write_json(outdir / "fpca.json", {
        "n_curves": len(ids),
        "explained": res.explained,
        "mean_curve": res.mean_curve,
        "corr_pc1_var_perc": corr,
        "degenerate": res.degenerate,
    })
    return res


def stage_provinces(settings, ds, outdir):
    dists = distributional.province_distributions(ds, "ivsm", settings["grid_size"])
    if settings["on_smoothed"]:
        t_grid = distributional.probability_grid(settings["grid_size"])
        smoothed = []
        for d in dists:
            grid, dens = distributional.kde(d.values, settings["bandwidth"])
            smoothed.append(
                distributional.ProvinceDistribution(
                    province_id=d.province_id, values=d.values, t_grid=t_grid,
                    quantile_fn=distributional.quantiles_from_density(grid, dens, t_grid),
                )
            )
        dists = smoothed
    ids = [d.province_id for d in dists]
    dmat = distributional.distance_matrix(dists)
    write_csv(outdir / "province_distance_matrix.csv",
              ["province_id"] + ids,
              [[ids[i]] + list(dmat[i]) for i in range(len(ids))])
    dendro = distributional.ward_cluster(dmat)
    write_csv(outdir / "province_merges.csv",
              ["step", "node_a", "node_b", "height", "new_size"],
              [(s, m[0], m[1], m[2], m[3]) for s, m in enumerate(dendro.merges)])
    labels = distributional.cut(dendro, settings["k_clusters"])
    write_csv(outdir / "province_labels.csv", ["province_id", "cluster"],
              zip(ids, labels))
    summary = distributional.cluster_summary(labels, dists)
    t_grid = dists[0].t_grid
    bary_header = ["t"] + [f"cluster_{lab}" for lab in summary]
    bary_rows = [[t_grid[g]] + [summary[lab]["barycenter"][g] for lab in summary]
                 for g in range(t_grid.shape[0])]
    write_csv(outdir / "province_barycenters.csv", bary_header, bary_rows)
    write_json(outdir / "province_clusters.json", {
        "k": settings["k_clusters"],
        "metric": "wasserstein-2 on " + ("kde-smoothed" if settings["on_smoothed"] else "empirical")
                  + " quantile functions",
        "bandwidth": settings["bandwidth"] if settings["on_smoothed"] else None,
        "clusters": {
            str(lab): {k: v for k, v in info.items() if k != "barycenter"}
            for lab, info in summary.items()
        },
    })
    return labels, summary


def export_geojson(settings, results_csv, out_path):
    if not settings.get("geometry"):
        raise ConfigError("export-geojson needs a geometry file (key 'geometry' or --geometry)")
    with open(settings["geometry"], "r", encoding="utf-8") as fh:
        collection = json.load(fh)
    with open(results_csv, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        table = {row[0]: dict(zip(header[1:], row[1:])) for row in reader}
    id_prop = settings["id_property"]
    features = []
    matched = set()
    for feat in collection.get("features", []):
        uid = str((feat.get("properties") or {}).get(id_prop))
        if uid in table:
            props = dict(feat.get("properties") or {})
            props.update(table[uid])
            feat = dict(feat, properties=props)
            matched.add(uid)
        features.append(feat)
    if not matched:
        raise GeovulnError("no geometry feature matched any result unit_id")
    unmatched = sorted(set(table) - matched)
    if unmatched:
        log.warning("%d result row(s) had no geometry: %s", len(unmatched), ", ".join(unmatched[:10]))
    out = dict(collection, features=features)
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        json.dump(out, fh, sort_keys=True)
        fh.write("\n")
    return len(matched), unmatched


# ---------------------------------------------------------------------------
# click wiring
# ---------------------------------------------------------------------------

def _settings_from_ctx(ctx, **extra):
    base = dict(ctx.obj or {})
    base.update({k: v for k, v in extra.items() if v is not None})
    config = base.pop("config", None)
    settings = make_settings(config, **base)
    effective = _kernels.set_threads(settings["threads"] or None)
    settings["_effective_threads"] = effective
    return settings


@click.group()
@click.option("--config", type=click.Path(exists=True), default=None, help="key = value run configuration")
@click.option("--seed", type=int, default=None, help="master random seed")
@click.option("--threads", type=int, default=None, help="worker threads for the permutation kernels")
@click.option("--out", type=click.Path(), default=None, help="output directory")
@click.option("--indicators", type=click.Path(exists=True), default=None)
@click.option("--adjacency", type=click.Path(exists=True), default=None)
@click.option("--geometry", type=click.Path(exists=True), default=None)
@click.option("--series", type=click.Path(exists=True), default=None)
@click.option("-v", "--verbose", is_flag=True, default=False)
@click.pass_context
def main(ctx, config, seed, threads, out, indicators, adjacency, geometry, series, verbose):
    """Multi-aspect vulnerability analytics over areal units."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    ctx.obj = {k: v for k, v in {
        "config": config, "seed": seed, "threads": threads, "out": out,
        "indicators": indicators, "adjacency": adjacency,
        "geometry": geometry, "series": series,
    }.items() if v is not None}


def _finish(settings, outdir, ds=None, stages=None):
    write_manifest(outdir, {k: v for k, v in settings.items() if not k.startswith("_")},
                   dataset_digest=ds.dataset_digest if ds is not None else None,
                   stages=stages, effective_threads=settings.get("_effective_threads"))


@main.command()
@click.pass_context
def validate(ctx):
    """Integrity report for the indicator dataset."""
    settings = _settings_from_ctx(ctx)
    ds = load_dataset(settings)
    outdir = _outdir(settings)
    report = stage_validate(settings, ds, outdir)
    _finish(settings, outdir, ds, [("validate", "completed")])
    click.echo(f"{len(ds)} records, {len(report.findings)} finding(s) -> {outdir/'validation.json'}")


@main.command()
@click.option("--rook", is_flag=True, default=None, help="rook (shared edge) instead of queen contiguity")
@click.pass_context
def weights(ctx, rook):
    """Build row-standardized contiguity weights."""
    settings = _settings_from_ctx(ctx, rook=rook)
    ds = load_dataset(settings)
    outdir = _outdir(settings)
    w = stage_weights(settings, ds, outdir)
    _finish(settings, outdir, ds, [("weights", "completed")])
    click.echo(f"{len(w)} units, {int(w.island_flags.sum())} island(s) -> {outdir/'weights.csv'}")


@main.command()
@click.option("--field", type=click.Choice(LISA_FIELDS), required=True)
@click.option("--permutations", type=int, default=None)
@click.option("--alpha", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.pass_context
def lisa(ctx, field, permutations, alpha, seed):
    """Local association map with conditional permutation inference."""
    settings = _settings_from_ctx(ctx, permutations=permutations, alpha=alpha, seed=seed)
    ds = load_dataset(settings)
    w = load_weights(settings, ds)
    outdir = _outdir(settings)
    results, moran = stage_lisa(settings, ds, w, field, outdir)
    if settings.get("geometry"):
        export_geojson(settings, outdir / f"lisa_{field}.csv", outdir / f"lisa_{field}.geojson")
    _finish(settings, outdir, ds, [(f"lisa_{field}", "completed")])
    n_sig = sum(1 for r in results if r.significant)
    click.echo(f"I = {moran:.6f}, {n_sig} significant unit(s) -> {outdir}/lisa_{field}.csv")


@main.group(name="coda")
def coda_group():
    """Building-stock composition analyses."""


@coda_group.command("pca")
@click.option("--classes", type=click.Choice(["9", "3"]), default=None)
@click.option("--correlation", is_flag=True, default=False,
              help="decompose the correlation matrix of the clr coordinates")
@click.pass_context
def coda_pca_cmd(ctx, classes, correlation):
    """Principal components of the time-of-construction compositions."""
    settings = _settings_from_ctx(ctx, classes=classes)
    ds = load_dataset(settings)
    outdir = _outdir(settings)
    _scores, res = stage_coda_pca(settings, ds, settings["classes"], outdir,
                                  use_correlation=correlation)
    _finish(settings, outdir, ds, [(f"coda_pca_{settings['classes']}", "completed")])
    click.echo(
        f"PC1 explains {res.explained[0]:.1%} (sdev {res.sdev[0]:.3f})"
        f" -> {outdir}/coda_pca_{settings['classes']}.csv"
    )


def _run_permanova(ctx, permutations, seed):
    settings = _settings_from_ctx(ctx, permanova_permutations=permutations, seed=seed)
    ds = load_dataset(settings)
    outdir = _outdir(settings)
    res = stage_permanova(settings, ds, outdir)
    _finish(settings, outdir, ds, [("permanova", "completed")])
    click.echo(f"F0 = {res.f0:.4g}, p = {res.p_value:.4g} -> {outdir/'permanova.json'}")


@coda_group.command("permanova")
@click.option("--permutations", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.pass_context
def coda_permanova_cmd(ctx, permutations, seed):
    """Permutational ANOVA of compositions across hazard classes."""
    _run_permanova(ctx, permutations, seed)


@main.command("permanova")
@click.option("--permutations", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.pass_context
def permanova_cmd(ctx, permutations, seed):
    """Alias for `coda permanova`."""
    _run_permanova(ctx, permutations, seed)


@main.command()
@click.option("--series", "series_flag", type=click.Path(exists=True), default=None,
              help="long-format population series (unit_id, year, population)")
@click.pass_context
def fpca(ctx, series_flag):
    """Functional PCA of smoothed log population-growth curves."""
    settings = _settings_from_ctx(ctx, series=series_flag)
    if not settings.get("series"):
        raise click.ClickException("fpca needs a population series file (key 'series' or --series)")
    ds = load_dataset(settings)
    outdir = _outdir(settings)
    res = stage_fpca(settings, ds, outdir)
    _finish(settings, outdir, ds, [("fpca", "completed")])
    click.echo(f"PC1 explains {res.explained[0]:.1%} -> {outdir/'fpca_scores.csv'}")


@main.command()
@click.option("--quantile-type", type=str, default=None, help="numpy quantile method name")
@click.pass_context
def thresholds(ctx, quantile_type):
    """Quartile thresholds for the joint selection criterion."""
    settings = _settings_from_ctx(ctx, quantile_type=quantile_type)
    ds = load_dataset(settings)
    outdir = _outdir(settings)
    scores, _ = pc1_scores(ds, settings["classes"], settings["delta_factor"])
    th = stage_thresholds(settings, ds, scores, outdir)
    _finish(settings, outdir, ds, [("thresholds", "completed")])
    click.echo(f"t_ivsm={th.t_ivsm:.4g} t_g={th.t_g:.4g} t_b={th.t_b:.4g} -> {outdir/'thresholds.json'}")


@main.command()
@click.option("--quantile-type", type=str, default=None)
@click.pass_context
def select(ctx, quantile_type):
    """Units past all three quartile thresholds, with hazard-class shares."""
    settings = _settings_from_ctx(ctx, quantile_type=quantile_type)
    ds = load_dataset(settings)
    outdir = _outdir(settings)
    scores, _ = pc1_scores(ds, settings["classes"], settings["delta_factor"])
    th = stage_thresholds(settings, ds, scores, outdir)
    mask = stage_select(settings, ds, scores, th, outdir)
    _finish(settings, outdir, ds, [("thresholds", "completed"), ("select", "completed")])
    click.echo(f"{int(mask.sum())} of {len(ds)} units selected -> {outdir/'selected.csv'}")


@main.command()
@click.option("--copeland-method", type=click.Choice(["fast", "brute", "both"]), default=None)
@click.pass_context
def rank(ctx, copeland_method):
    """Per-indicator rankings and Copeland aggregation."""
    settings = _settings_from_ctx(ctx, copeland_method=copeland_method)
    ds = load_dataset(settings)
    outdir = _outdir(settings)
    scores, _ = pc1_scores(ds, settings["classes"], settings["delta_factor"])
    c = stage_rank(settings, ds, scores, outdir)
    _finish(settings, outdir, ds, [("rank", "completed")])
    click.echo(f"Copeland scores in [{int(c.min())}, {int(c.max())}] -> {outdir/'ranks.csv'}")


@main.command()
@click.option("--k", "k_clusters", type=int, default=None, help="number of clusters")
@click.option("--bandwidth", type=float, default=None)
@click.option("--on-smoothed", is_flag=True, default=None,
              help="measure distances on KDE-smoothed distributions")
@click.pass_context
def provinces(ctx, k_clusters, bandwidth, on_smoothed):
    """Wasserstein geometry and Ward clustering of province distributions."""
    settings = _settings_from_ctx(ctx, k_clusters=k_clusters, bandwidth=bandwidth,
                                  on_smoothed=on_smoothed)
    ds = load_dataset(settings)
    outdir = _outdir(settings)
    labels, summary = stage_provinces(settings, ds, outdir)
    _finish(settings, outdir, ds, [("provinces", "completed")])
    click.echo(f"{len(labels)} provinces in {settings['k_clusters']} clusters -> {outdir/'province_labels.csv'}")


@main.command("export-geojson")
@click.option("--results", "results_csv", type=click.Path(exists=True), required=True,
              help="result CSV whose first column is unit_id")
@click.option("--output", "output_path", type=click.Path(), required=True)
@click.pass_context
def export_geojson_cmd(ctx, results_csv, output_path):
    """Join a result table onto the geometry as feature properties."""
    settings = _settings_from_ctx(ctx)
    matched, unmatched = export_geojson(settings, results_csv, output_path)
    click.echo(f"{matched} feature(s) annotated -> {output_path}"
               + (f" ({len(unmatched)} unmatched result ids)" if unmatched else ""))


@main.command()
@click.pass_context
def pipeline(ctx):
    """Run every analysis stage in order, writing all artifacts."""
    settings = _settings_from_ctx(ctx)
    outdir = _outdir(settings)
    stages = []
    ds = None
    current = "ingest"
    try:
        ds = load_dataset(settings)
        stages.append(("ingest", "completed"))
        current = "validate"
        stage_validate(settings, ds, outdir)
        stages.append(("validate", "completed"))
        current = "weights"
        w = stage_weights(settings, ds, outdir)
        stages.append(("weights", "completed"))
        for field in ("ivsm", "var_perc", "eta_q3"):
            current = f"lisa_{field}"
            stage_lisa(settings, ds, w, field, outdir)
            stages.append((current, "completed"))
        current = "coda_pca"
        scores, _ = stage_coda_pca(settings, ds, 9, outdir)
        stage_coda_pca(settings, ds, 3, outdir)
        stages.append(("coda_pca", "completed"))
        current = "permanova"
        stage_permanova(settings, ds, outdir)
        stages.append(("permanova", "completed"))
        current = "lisa_pc1"
        if settings["classes"] == 9:
            pc1 = scores
        else:
            pc1, _ = pc1_scores(ds, settings["classes"], settings["delta_factor"])
        results = autocorr.lisa(w, pc1, settings["permutations"], settings["alpha"], settings["seed"])
        write_csv(
            outdir / "lisa_pc1.csv",
            ["unit_id", "z", "lag", "local_i", "p_value", "quadrant", "significant"],
            [(r.unit_id, r.z, r.lag, r.local_i, r.p_value, r.quadrant.value, r.significant)
             for r in results],
        )
        hazard = {r.unit_id: r.ag_max for r in ds.records}
        hotspots = autocorr.stratify(results, hazard)
        write_csv(outdir / "hotspots_pc1.csv", ["unit_id", "base_class", "hazard_macro"],
                  [(h.unit_id, h.base_class.value, h.hazard_macro) for h in hotspots])
        stages.append(("lisa_pc1", "completed"))
        current = "thresholds_select"
        th = stage_thresholds(settings, ds, pc1, outdir)
        stage_select(settings, ds, pc1, th, outdir)
        stages.append(("thresholds_select", "completed"))
        current = "rank"
        stage_rank(settings, ds, pc1, outdir)
        stages.append(("rank", "completed"))
        if settings.get("series"):
            try:
                stage_fpca(settings, ds, outdir)
                stages.append(("fpca", "completed"))
            except GeovulnError as exc:
                stages.append(("fpca", f"failed: {exc}"))
                log.warning("optional fpca stage failed: %s", exc)
        else:
            stages.append(("fpca", "skipped: no population series configured"))
        current = "provinces"
        stage_provinces(settings, ds, outdir)
        stages.append(("provinces", "completed"))
        if settings.get("geometry"):
            current = "export_geojson"
            export_geojson(settings, outdir / "lisa_ivsm.csv", outdir / "lisa_ivsm.geojson")
            export_geojson(settings, outdir / "ranks.csv", outdir / "copeland.geojson")
            stages.append(("export_geojson", "completed"))
        else:
            stages.append(("export_geojson", "skipped: no geometry configured"))
    except Exception as exc:
        stages.append((current, f"aborted: {exc}"))
        _finish(settings, outdir, ds, stages)
        raise click.ClickException(f"pipeline aborted in stage '{current}': {exc}") from exc
    _finish(settings, outdir, ds, stages)
    click.echo(f"pipeline complete: {len(stages)} stage(s) -> {outdir}")


if __name__ == "__main__":
    main()
