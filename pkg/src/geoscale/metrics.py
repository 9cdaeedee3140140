"""Attractiveness tables: Flickr-style foreign objects, migrant stocks, city structure."""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import Counter
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from geoscale.geoassign import RegionSet
from geoscale.homeinfer import AssignedLike
from geoscale.ingest import open_text

log = logging.getLogger(__name__)

DEFAULT_CITY_THRESHOLD = 300_000

DEST_ROWS = "rows=destination,columns=origin"
ORIGIN_ROWS = "rows=origin,columns=destination"


class TableError(ValueError):
    pass


@dataclass(frozen=True)
class TableRow:
    region_id: str
    population: float
    attractiveness: float


@dataclass
class AttractivenessTable:
    rows: list[TableRow]
    source_label: str
    excluded: list[dict] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        ids = [r.region_id for r in self.rows]
        if len(set(ids)) != len(ids):
            raise TableError("duplicate region_id in attractiveness table")
        for r in self.rows:
            if not r.population > 0:
                raise TableError(f"row {r.region_id!r}: population must be positive")
            if not r.attractiveness >= 0:
                raise TableError(f"row {r.region_id!r}: attractiveness must be non-negative")

    def __len__(self) -> int:
        return len(self.rows)

    def as_dict(self) -> dict[str, TableRow]:
        return {r.region_id: r for r in self.rows}

    @property
    def populations(self) -> np.ndarray:
        return np.array([r.population for r in self.rows], dtype=float)

    @property
    def values(self) -> np.ndarray:
        return np.array([r.attractiveness for r in self.rows], dtype=float)


def _build_table(
    counts: Mapping[str, float],
    population: Mapping[str, float | None],
    source_label: str,
    metadata: dict | None = None,
) -> AttractivenessTable:
    rows, excluded = [], []
    for rid in sorted(population):
        p = population[rid]
        if p is None or not p > 0:
            excluded.append({"region_id": rid, "reason": "missing population"})
            continue
        rows.append(TableRow(rid, float(p), counts.get(rid, 0)))
    for rid in sorted(set(counts) - set(population)):
        excluded.append({"region_id": rid, "reason": "missing population"})
    if excluded:
        log.warning("%s: %d rows excluded for missing population", source_label, len(excluded))
    return AttractivenessTable(rows, source_label, excluded, dict(metadata or {}))


# --------------------------------------------------------------------------
# Flickr


def flickr_attractiveness(
    assigned: Iterable[AssignedLike],
    homes: Mapping[str, str | None],
    rs: RegionSet,
    source_label: str = "flickr",
) -> AttractivenessTable:
    """Count objects per region taken by users whose defined home country differs.

    Every region of ``rs`` gets a row (possibly with A = 0) unless it lacks a
    population, in which case it is reported in ``excluded``.
    """
    counts: Counter[str] = Counter()
    for a in assigned:
        if a.region_id is None:
            continue
        home = homes.get(a.user_id)
        if home is None:
            continue
        if home != rs.country_of(a.region_id):
            counts[a.region_id] += 1
    population = {r.region_id: r.population for r in rs}
    return _build_table(counts, population, source_label, {"definition": "objects by users homed in another country"})


# --------------------------------------------------------------------------
# migration


@dataclass
class ODMatrix:
    """Migrant stocks; ``stock[d, o]`` is people from origin ``o`` living in ``d``."""

    countries: list[str]
    stock: np.ndarray
    orientation: str = DEST_ROWS

    def __post_init__(self) -> None:
        n = len(self.countries)
        if self.stock.shape != (n, n):
            raise TableError(f"OD matrix must be {n}x{n}, got {self.stock.shape}")
        if (self.stock < 0).any():
            raise TableError("OD matrix entries must be non-negative")


def _parse_cell(text: str, row: int, col: int) -> float:
    text = text.strip()
    if not text:
        return 0.0
    try:
        value = float(text.replace("_", ""))
    except ValueError:
        raise TableError(f"non-numeric OD cell {text!r} at row {row}, column {col}") from None
    if not math.isfinite(value) or value < 0:
        raise TableError(f"invalid OD cell {text!r} at row {row}, column {col}")
    return value


def orientation_from_corner(corner: str) -> str:
    """Interpret the header's first cell, e.g. ``destination\\origin``.

    Anything that does not start with ``origin`` is read as destination rows.
    """
    return ORIGIN_ROWS if corner.strip().lower().startswith("origin") else DEST_ROWS


def load_od_matrix(path_or_lines: str | Path | Iterable[str]) -> ODMatrix:
    """Parse an OD CSV: header of column ids, first column of row ids.

    The corner cell declares orientation (``destination\\origin`` by default,
    ``origin\\destination`` to read rows as origins). The result is square
    over the union of row and column ids; absent pairs are zero.
    """
    if isinstance(path_or_lines, (str, Path)):
        with open_text(path_or_lines) as fh:
            rows = list(csv.reader(fh))
    else:
        rows = list(csv.reader(path_or_lines))
    rows = [r for r in rows if any(c.strip() for c in r)]
    if not rows:
        raise TableError("empty OD matrix")
    header = rows[0]
    orientation = orientation_from_corner(header[0])
    col_ids = [h.strip() for h in header[1:]]
    if len(set(col_ids)) != len(col_ids):
        raise TableError("duplicate column id in OD header")
    width = len(header)
    row_ids, values = [], []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise TableError(f"ragged OD row {i}: {len(row)} cells, header has {width}")
        row_ids.append(row[0].strip())
        values.append([_parse_cell(c, i, j) for j, c in enumerate(row[1:], start=2)])
    if len(set(row_ids)) != len(row_ids):
        raise TableError("duplicate row id in OD matrix")

    countries = sorted(set(row_ids) | set(col_ids))
    pos = {c: k for k, c in enumerate(countries)}
    stock = np.zeros((len(countries), len(countries)))
    for rid, vals in zip(row_ids, values):
        for cid, v in zip(col_ids, vals):
            if orientation == DEST_ROWS:
                stock[pos[rid], pos[cid]] = v
            else:
                stock[pos[cid], pos[rid]] = v
    return ODMatrix(countries, stock, orientation)


def migration_attractiveness(
    od: ODMatrix,
    population: Mapping[str, float],
    source_label: str = "migration",
) -> AttractivenessTable:
    """Foreign-born residents per destination: off-diagonal sum over origins."""
    off = od.stock.copy()
    np.fill_diagonal(off, 0.0)
    totals = off.sum(axis=1)
    counts = {c: float(totals[k]) for k, c in enumerate(od.countries)}
    pop = {c: population.get(c) for c in od.countries}
    return _build_table(counts, pop, source_label, {"od_orientation": od.orientation})


# --------------------------------------------------------------------------
# country structure


@dataclass(frozen=True)
class CityRecord:
    name: str
    country_id: str
    population: float
    is_capital: bool = False

    def __post_init__(self) -> None:
        if not self.population > 0:
            raise TableError(f"city {self.name!r}: population must be positive")


def country_structure(
    cities: Iterable[CityRecord],
    threshold: float = DEFAULT_CITY_THRESHOLD,
) -> tuple[dict[str, int], dict[str, float]]:
    """Cities above ``threshold`` per country, and each country's capital population."""
    counts: dict[str, int] = {}
    capitals: dict[str, float] = {}
    for city in cities:
        counts.setdefault(city.country_id, 0)
        if city.population > threshold:
            counts[city.country_id] += 1
        if city.is_capital:
            if city.country_id in capitals:
                raise TableError(f"country {city.country_id!r} lists more than one capital")
            capitals[city.country_id] = city.population
    return dict(sorted(counts.items())), dict(sorted(capitals.items()))


def structure_tables(
    cities: Iterable[CityRecord],
    population: Mapping[str, float],
    threshold: float = DEFAULT_CITY_THRESHOLD,
) -> tuple[AttractivenessTable, AttractivenessTable]:
    counts, capitals = country_structure(cities, threshold)
    meta = {"city_threshold": threshold}
    count_table = _build_table(counts, {c: population.get(c) for c in counts}, "city_count", meta)
    capital_table = _build_table(capitals, {c: population.get(c) for c in capitals}, "capital_population", meta)
    return count_table, capital_table


def read_cities(path: str | Path) -> list[CityRecord]:
    """Read ``name,country_id,population,is_capital`` rows."""
    out = []
    with open_text(path) as fh:
        for lineno, row in enumerate(csv.DictReader(fh), start=2):
            try:
                pop = float(row["population"])
            except (KeyError, TypeError, ValueError) as exc:
                raise TableError(f"{path}:{lineno}: bad city population") from exc
            flag = (row.get("is_capital") or "").strip().lower() in ("1", "true", "yes", "y")
            out.append(CityRecord(row["name"], row["country_id"].strip(), pop, flag))
    return out


# --------------------------------------------------------------------------
# table I/O

TABLE_COLUMNS = ("region_id", "population", "attractiveness")


def _fmt(x: float) -> str:
    # integers print without a trailing .0; everything else round-trips via repr
    return str(int(x)) if float(x).is_integer() and abs(x) < 2**53 else repr(float(x))


def write_table(table: AttractivenessTable, path: str | Path) -> Path:
    """Write the table CSV and its ``.meta.json`` sidecar; returns the sidecar path."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TABLE_COLUMNS)
        for r in table.rows:
            writer.writerow([r.region_id, _fmt(r.population), _fmt(r.attractiveness)])
    sidecar = path.with_suffix(".meta.json")
    meta = {"source_label": table.source_label, "excluded": table.excluded, **table.metadata}
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return sidecar


def read_table(path: str | Path) -> AttractivenessTable:
    path = Path(path)
    rows = []
    with open_text(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != TABLE_COLUMNS:
            raise TableError(f"{path}: expected header {','.join(TABLE_COLUMNS)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append(TableRow(row[0], float(row[1]), float(row[2])))
            except (IndexError, ValueError) as exc:
                raise TableError(f"{path}:{lineno}: bad table row") from exc
    sidecar = path.with_suffix(".meta.json")
    meta = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    label = meta.pop("source_label", path.stem)
    excluded = meta.pop("excluded", [])
    return AttractivenessTable(rows, label, excluded, meta)
