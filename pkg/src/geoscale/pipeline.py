"""Pipeline stages with plain-file handoff, and the one-shot runner.

Every stage reads the previous stage's files and writes its own, so running
the stages one by one through the CLI yields the same bytes as ``run_pipeline``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import platform
import shlex
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable

import numpy as np
import scipy

from geoscale import __version__
from geoscale.geoassign import assign_batch, load_regions_file, read_assigned, write_assigned
from geoscale.homeinfer import accumulate, coverage_stats, infer_homes, read_homes, write_coverage, write_homes
from geoscale.ingest import Schema, prune_stream, read_raw_lines, read_records, write_records
from geoscale.metrics import (
    DEFAULT_CITY_THRESHOLD,
    flickr_attractiveness,
    load_od_matrix,
    migration_attractiveness,
    read_cities,
    read_table,
    structure_tables,
    write_table,
)
from geoscale.scaling import (
    fit_power_law,
    histogram_lognormal,
    read_fit,
    residuals,
    write_fit,
    write_histogram,
    write_residuals,
)

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage!r} failed: {message}")
        self.stage = stage
        self.message = message


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_json(path: str | Path, payload: Any) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _require(path: str | Path | None, what: str) -> Path:
    if not path:
        raise FileNotFoundError(f"no {what} given")
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


# --------------------------------------------------------------------------
# stages


def stage_ingest(input_path, schema: Schema, out_path, stats_path, threads: int = 1) -> dict:
    records, stats = prune_stream(read_raw_lines(_require(input_path, "records file")), schema, threads=threads)
    with open(out_path, "w", newline="") as fh:
        write_records(records, fh)
    if not stats.is_consistent():
        raise RuntimeError(f"prune statistics do not add up: {stats}")
    _write_json(stats_path, stats.to_dict())
    return stats.to_dict()


def stage_assign(records_path, regions_path, population_path, out_path, threads: int = 1) -> dict:
    rs = load_regions_file(_require(regions_path, "regions file"),
                           _require(population_path, "population table") if population_path else None)
    records = read_records(_require(records_path, "record file"))
    with open(out_path, "w", newline="") as fh:
        return write_assigned(assign_batch(records, rs, threads=threads), fh)


def stage_homes(assigned_path, regions_path, out_path, stats_path) -> dict:
    rs = load_regions_file(_require(regions_path, "regions file"))
    profiles = accumulate(read_assigned(_require(assigned_path, "assigned file")), rs)
    homes = infer_homes(profiles)
    with open(out_path, "w", newline="") as fh:
        write_homes(homes, fh)
    cov = coverage_stats(profiles, homes)
    write_coverage(cov, stats_path)
    return {"users": len(homes), "defined_homes": sum(h is not None for h in homes.values()), **cov.to_dict()}


def stage_attract_flickr(assigned_path, homes_path, regions_path, population_path, out_path) -> dict:
    rs = load_regions_file(_require(regions_path, "regions file"), _require(population_path, "population table"))
    homes = read_homes(_require(homes_path, "homes file"))
    table = flickr_attractiveness(read_assigned(_require(assigned_path, "assigned file")), homes, rs)
    write_table(table, out_path)
    return {"rows": len(table), "excluded": len(table.excluded)}


def stage_attract_migration(od_path, population_path, out_path) -> dict:
    from geoscale.geoassign import read_population_csv

    od = load_od_matrix(_require(od_path, "OD matrix"))
    pop = read_population_csv(_require(population_path, "population table"))
    table = migration_attractiveness(od, pop)
    write_table(table, out_path)
    return {"rows": len(table), "excluded": len(table.excluded), "od_orientation": od.orientation}


def stage_attract_cities(cities_path, population_path, count_out, capital_out,
                         threshold: float = DEFAULT_CITY_THRESHOLD) -> dict:
    from geoscale.geoassign import read_population_csv

    cities = read_cities(_require(cities_path, "city list"))
    pop = read_population_csv(_require(population_path, "population table"))
    counts, capitals = structure_tables(cities, pop, threshold)
    write_table(counts, count_out)
    write_table(capitals, capital_out)
    return {"city_count_rows": len(counts), "capital_rows": len(capitals)}


def stage_fit(table_path, fit_out, residuals_out=None) -> dict:
    table = read_table(_require(table_path, "attractiveness table"))
    fit = fit_power_law(table)
    write_fit(fit, fit_out, {"source_label": table.source_label})
    if residuals_out:
        write_residuals(residuals(table, fit), residuals_out)
    return fit.to_dict()


def stage_residuals(table_path, fit_path, out_path) -> dict:
    table = read_table(_require(table_path, "attractiveness table"))
    fit = read_fit(_require(fit_path, "fit file"), table)
    rows = residuals(table, fit)
    write_residuals(rows, out_path)
    return {"rows": len(rows)}


def stage_dist(values, bins: int, out_path) -> dict:
    table, fit = histogram_lognormal(values, bins)
    write_histogram(table, fit, out_path)
    return {"mu": fit.mu, "sigma": fit.sigma, "n": fit.n}


# --------------------------------------------------------------------------
# configuration


@dataclass
class PipelineConfig:
    records: str | None = None
    regions: str | None = None
    population: str | None = None
    home_regions: str | None = None
    od: str | None = None
    od_population: str | None = None
    cities: str | None = None
    schema: str | None = None
    out_dir: str = "geoscale-out"
    threads: int = 1
    bins: int = 20
    city_threshold: float = DEFAULT_CITY_THRESHOLD

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        return cls.from_mapping(read_config_file(path), base_dir=Path(path).parent)

    @classmethod
    def from_mapping(cls, values: dict[str, str], base_dir: Path | None = None) -> "PipelineConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs: dict[str, Any] = {}
        for key, raw in values.items():
            key = key.replace("-", "_")
            if key not in known:
                raise ValueError(f"unknown config key {key!r}")
            if key in ("threads", "bins"):
                kwargs[key] = int(raw)
            elif key == "city_threshold":
                kwargs[key] = float(raw)
            elif key == "schema":
                kwargs[key] = raw
            else:
                kwargs[key] = _resolve(raw, base_dir)
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _resolve(value: str, base_dir: Path | None) -> str:
    p = Path(value)
    if base_dir is not None and not p.is_absolute():
        p = base_dir / p
    return str(p)


def read_config_file(path: str | Path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment; values may be shell-quoted."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        parts = shlex.split(value)
        out[key.strip()] = parts[0] if parts else ""
    return out


# --------------------------------------------------------------------------
# one-shot runner


@dataclass
class RunResult:
    ok: bool
    manifest_path: Path
    failed_stage: str | None = None
    error: str | None = None
    rerun_identical: bool | None = None
    manifest: dict = field(default_factory=dict)


def _versions() -> dict[str, str]:
    return {"geoscale": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def run_pipeline(config: PipelineConfig) -> RunResult:
    """ingest -> assign -> homes -> attract -> fit -> residuals, plus optional extras.

    Writes every intermediate file under ``config.out_dir`` and a
    ``manifest.json`` with input/output digests and row counts. A failing
    stage stops the run and the manifest is marked incomplete.
    """
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest_path = out / MANIFEST_NAME
    previous = None
    if manifest_path.exists():
        try:
            previous = json.loads(manifest_path.read_text())
        except json.JSONDecodeError:
            previous = None

    counts: dict[str, Any] = {}
    produced: list[str] = []
    schema = Schema.parse(config.schema)

    def run(stage: str, fn: Callable[[], dict], *outputs: str) -> None:
        log.info("stage %s", stage)
        try:
            counts[stage] = fn()
        except Exception as exc:
            raise StageError(stage, str(exc)) from exc
        produced.extend(o for o in outputs if (out / o).exists())

    p = lambda name: out / name  # noqa: E731
    home_regions = config.home_regions or config.regions
    failed: StageError | None = None
    try:
        run("ingest", lambda: stage_ingest(config.records, schema, p("records.csv"), p("prune_stats.json"),
                                           config.threads), "records.csv", "prune_stats.json")
        run("assign", lambda: stage_assign(p("records.csv"), config.regions, config.population,
                                           p("assigned.csv"), config.threads), "assigned.csv")
        homes_input = "assigned.csv"
        if config.home_regions:
            run("assign_home", lambda: stage_assign(p("records.csv"), config.home_regions, None,
                                                    p("assigned_home.csv"), config.threads), "assigned_home.csv")
            homes_input = "assigned_home.csv"
        run("homes", lambda: stage_homes(p(homes_input), home_regions, p("homes.csv"), p("homes_stats.json")),
            "homes.csv", "homes_stats.json")
        run("attract", lambda: stage_attract_flickr(p("assigned.csv"), p("homes.csv"), config.regions,
                                                    config.population, p("attract_flickr.csv")),
            "attract_flickr.csv", "attract_flickr.meta.json")
        run("fit", lambda: stage_fit(p("attract_flickr.csv"), p("fit_flickr.json")), "fit_flickr.json")
        run("residuals", lambda: stage_residuals(p("attract_flickr.csv"), p("fit_flickr.json"),
                                                 p("residuals_flickr.csv")), "residuals_flickr.csv")
        run("dist", lambda: _dist_from_table(p("attract_flickr.csv"), config.bins, p("hist_population.csv"),
                                             p("hist_flickr.csv")),
            "hist_population.csv", "hist_population.meta.json", "hist_flickr.csv", "hist_flickr.meta.json")
        if config.od:
            od_pop = config.od_population or config.population
            run("attract_migration", lambda: stage_attract_migration(config.od, od_pop, p("attract_migration.csv")),
                "attract_migration.csv", "attract_migration.meta.json")
            run("fit_migration", lambda: stage_fit(p("attract_migration.csv"), p("fit_migration.json"),
                                                   p("residuals_migration.csv")),
                "fit_migration.json", "residuals_migration.csv")
        if config.cities:
            city_pop = config.od_population or config.population
            run("attract_cities", lambda: stage_attract_cities(config.cities, city_pop, p("city_count.csv"),
                                                               p("capital_population.csv"), config.city_threshold),
                "city_count.csv", "city_count.meta.json", "capital_population.csv", "capital_population.meta.json")
            run("fit_cities", lambda: {
                "city_count": stage_fit(p("city_count.csv"), p("fit_city_count.json")),
                "capital_population": stage_fit(p("capital_population.csv"), p("fit_capital_population.json")),
            }, "fit_city_count.json", "fit_capital_population.json")
    except StageError as exc:
        failed = exc
        log.error("%s", exc)

    inputs = {}
    for key in ("records", "regions", "population", "home_regions", "od", "od_population", "cities"):
        path = getattr(config, key)
        if path:
            inputs[key] = {"path": path, "sha256": sha256_file(path) if Path(path).is_file() else None}
    manifest = {
        "status": "incomplete" if failed else "complete",
        "failed_stage": failed.stage if failed else None,
        "error": failed.message if failed else None,
        # worker count never changes results, so it stays out of the manifest
        "config": {k: v for k, v in config.to_dict().items() if k not in ("out_dir", "threads")},
        "inputs": inputs,
        "outputs": {name: sha256_file(out / name) for name in sorted(set(produced))},
        "row_counts": counts,
        "versions": _versions(),
    }
    _write_json(manifest_path, manifest)

    rerun_identical = None
    if previous is not None and previous.get("inputs") == manifest["inputs"]:
        rerun_identical = previous.get("outputs") == manifest["outputs"]
        if rerun_identical:
            log.info("rerun reproduced all %d output digests", len(manifest["outputs"]))
        else:
            log.warning("rerun on identical inputs changed output digests")
    return RunResult(
        ok=failed is None, manifest_path=manifest_path,
        failed_stage=failed.stage if failed else None,
        error=failed.message if failed else None,
        rerun_identical=rerun_identical, manifest=manifest,
    )


def _dist_from_table(table_path, bins: int, pop_out, attr_out) -> dict:
    table = read_table(table_path)
    pops = [r.population for r in table.rows]
    attrs = [r.attractiveness for r in table.rows if r.attractiveness > 0]
    return {
        "population": stage_dist(pops, bins, pop_out),
        "attractiveness": stage_dist(attrs, bins, attr_out),
    }
