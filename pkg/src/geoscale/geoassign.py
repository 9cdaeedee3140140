"""Reverse geocoding of points to regions by point-in-polygon containment.

Containment uses the even-odd ray-casting rule over every ring of a polygon
(exterior plus holes), with points on any ring boundary counted as inside.
When several regions contain a point the smallest ``region_id`` wins, which
makes the answer independent of region input order.

Two code paths share that predicate:

* ``assign`` / ``assign_batch`` go through a uniform grid of region and
  polygon-part bounding boxes;
* ``assign_brute_force`` / ``assign_points_brute_force`` scan every polygon
  of every region and are the correctness oracle for the indexed path.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from collections.abc import Iterable, Iterator, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from geoscale.ingest import MediaRecord, open_text

log = logging.getLogger(__name__)

MAX_LON_JUMP = 180.0


class RegionError(ValueError):
    """Invalid region geometry or region metadata."""


@dataclass(frozen=True)
class PolygonPart:
    """One polygon of a (multi)polygon: exterior ring followed by holes.

    Each ring is an ``(n, 2)`` float array of lon/lat vertices with the first
    vertex repeated at the end.
    """

    rings: tuple[np.ndarray, ...]
    bbox: tuple[float, float, float, float]

    @classmethod
    def from_rings(cls, rings: Sequence[np.ndarray]) -> "PolygonPart":
        ext = rings[0]
        bbox = (float(ext[:, 0].min()), float(ext[:, 1].min()), float(ext[:, 0].max()), float(ext[:, 1].max()))
        # holes outside the exterior would break the bbox filter, so widen to cover them
        for hole in rings[1:]:
            bbox = (
                min(bbox[0], float(hole[:, 0].min())), min(bbox[1], float(hole[:, 1].min())),
                max(bbox[2], float(hole[:, 0].max())), max(bbox[3], float(hole[:, 1].max())),
            )
        return cls(tuple(rings), bbox)


@dataclass
class Region:
    region_id: str
    name: str
    country_id: str
    parts: list[PolygonPart]
    population: float | None = None

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        boxes = [p.bbox for p in self.parts]
        return (
            min(b[0] for b in boxes), min(b[1] for b in boxes),
            max(b[2] for b in boxes), max(b[3] for b in boxes),
        )


# --------------------------------------------------------------------------
# containment predicates


def _edges(ring: np.ndarray) -> Iterator[tuple[float, float, float, float]]:
    """Ring edges with endpoints in canonical (lexicographic) order.

    Neighbouring regions traverse a shared edge in opposite directions;
    ordering the endpoints makes both evaluate bit-identical expressions, so
    no point falls into a rounding gap between them.
    """
    xs, ys = ring[:, 0].tolist(), ring[:, 1].tolist()
    for i in range(len(xs) - 1):
        a, b = (xs[i], ys[i]), (xs[i + 1], ys[i + 1])
        if b < a:
            a, b = b, a
        yield a[0], a[1], b[0], b[1]


def point_in_ring_boundary(x: float, y: float, ring: np.ndarray) -> bool:
    for x0, y0, x1, y1 in _edges(ring):
        if min(x0, x1) <= x <= max(x0, x1) and min(y0, y1) <= y <= max(y0, y1):
            if (x1 - x0) * (y - y0) - (y1 - y0) * (x - x0) == 0.0:
                return True
    return False


def ring_crossings(x: float, y: float, ring: np.ndarray) -> int:
    """Number of ring edges crossed by the ray from (x, y) towards +x."""
    hits = 0
    for x0, y0, x1, y1 in _edges(ring):
        if (y0 > y) != (y1 > y):
            # clamp: rounding may push the hit past the edge's x extent
            x_hit = min(max(x0 + (y - y0) * (x1 - x0) / (y1 - y0), min(x0, x1)), max(x0, x1))
            if x < x_hit:
                hits += 1
    return hits


def part_contains(part: PolygonPart, x: float, y: float) -> bool:
    x_min, y_min, x_max, y_max = part.bbox
    if not (x_min <= x <= x_max and y_min <= y <= y_max):
        return False
    if any(point_in_ring_boundary(x, y, ring) for ring in part.rings):
        return True
    return sum(ring_crossings(x, y, ring) for ring in part.rings) % 2 == 1


def part_contains_many(part: PolygonPart, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Vectorised ``part_contains`` for arrays of points.

    Evaluates exactly the same floating-point expressions as the scalar path
    so both agree bit-for-bit on boundary decisions.
    """
    on_boundary = np.zeros(x.shape, dtype=bool)
    parity = np.zeros(x.shape, dtype=bool)
    for ring in part.rings:
        for x0, y0, x1, y1 in _edges(ring):
            in_box = (
                (x >= min(x0, x1)) & (x <= max(x0, x1))
                & (y >= min(y0, y1)) & (y <= max(y0, y1))
            )
            if in_box.any():
                cross = (x1 - x0) * (y - y0) - (y1 - y0) * (x - x0)
                on_boundary |= in_box & (cross == 0.0)
            if y0 == y1:
                continue
            straddle = (y0 > y) != (y1 > y)
            x_hit = np.minimum(np.maximum(x0 + (y - y0) * (x1 - x0) / (y1 - y0), min(x0, x1)), max(x0, x1))
            parity ^= straddle & (x < x_hit)
    return on_boundary | parity


def region_contains(region: Region, x: float, y: float) -> bool:
    return any(part_contains(p, x, y) for p in region.parts)


# --------------------------------------------------------------------------
# region set and index


class GridIndex:
    """Uniform grid over polygon-part bounding boxes.

    A part is registered in every cell its bounding box touches. Cell
    coordinates come from a monotone function of the coordinate, so a point
    inside a bounding box always lands in a cell that lists the part.
    """

    def __init__(self, parts: Sequence[tuple[int, PolygonPart]], cells_per_axis: int | None = None):
        boxes = np.array([p.bbox for _, p in parts], dtype=float).reshape(-1, 4)
        if len(boxes):
            self.x0, self.y0 = float(boxes[:, 0].min()), float(boxes[:, 1].min())
            x1, y1 = float(boxes[:, 2].max()), float(boxes[:, 3].max())
        else:
            self.x0 = self.y0 = 0.0
            x1 = y1 = 1.0
        n = cells_per_axis or max(1, min(512, int(math.ceil(2 * math.sqrt(max(len(parts), 1))))))
        self.nx = self.ny = n
        self.dx = (x1 - self.x0) / n or 1.0
        self.dy = (y1 - self.y0) / n or 1.0
        self.cells: list[list[list[int]]] = [[[] for _ in range(n)] for _ in range(n)]
        self.part_cells: list[tuple[int, int, int, int]] = []
        for k, (_, part) in enumerate(parts):
            cx0, cy0 = self.cell_of(part.bbox[0], part.bbox[1])
            cx1, cy1 = self.cell_of(part.bbox[2], part.bbox[3])
            self.part_cells.append((cx0, cy0, cx1, cy1))
            for i in range(cx0, cx1 + 1):
                for j in range(cy0, cy1 + 1):
                    self.cells[i][j].append(k)

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        i = min(max(int(math.floor((x - self.x0) / self.dx)), 0), self.nx - 1)
        j = min(max(int(math.floor((y - self.y0) / self.dy)), 0), self.ny - 1)
        return i, j

    def cells_of(self, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        i = np.clip(np.floor((x - self.x0) / self.dx), 0, self.nx - 1).astype(np.int64)
        j = np.clip(np.floor((y - self.y0) / self.dy), 0, self.ny - 1).astype(np.int64)
        return i, j

    def candidates(self, x: float, y: float) -> list[int]:
        i, j = self.cell_of(x, y)
        return self.cells[i][j]


class RegionSet:
    """Immutable collection of regions plus the grid index over their parts."""

    def __init__(self, regions: Iterable[Region], cells_per_axis: int | None = None):
        regions = list(regions)
        seen: set[str] = set()
        for r in regions:
            if r.region_id in seen:
                raise RegionError(f"duplicate region_id {r.region_id!r}")
            seen.add(r.region_id)
        # sorted order makes "first match wins" equal to "smallest id wins"
        self.regions: list[Region] = sorted(regions, key=lambda r: r.region_id)
        self.by_id: dict[str, Region] = {r.region_id: r for r in self.regions}
        self.parts: list[tuple[int, PolygonPart]] = [
            (ri, part) for ri, r in enumerate(self.regions) for part in r.parts
        ]
        self.index = GridIndex(self.parts, cells_per_axis)

    def __len__(self) -> int:
        return len(self.regions)

    def __iter__(self) -> Iterator[Region]:
        return iter(self.regions)

    def __getitem__(self, region_id: str) -> Region:
        return self.by_id[region_id]

    def country_of(self, region_id: str) -> str:
        return self.by_id[region_id].country_id

    @property
    def missing_population(self) -> list[str]:
        return [r.region_id for r in self.regions if r.population is None]


# --------------------------------------------------------------------------
# loading


def _ring_array(coords: Any, feature_id: str) -> np.ndarray:
    try:
        ring = np.asarray(coords, dtype=float)
    except (TypeError, ValueError) as exc:
        raise RegionError(f"feature {feature_id!r}: non-numeric ring coordinates") from exc
    if ring.ndim != 2 or ring.shape[1] < 2:
        raise RegionError(f"feature {feature_id!r}: ring is not a list of positions")
    ring = ring[:, :2]
    if len(ring) < 4:
        raise RegionError(f"feature {feature_id!r}: ring has {len(ring)} vertices, need at least 4")
    if not np.array_equal(ring[0], ring[-1]):
        raise RegionError(f"feature {feature_id!r}: ring is not closed")
    if not np.isfinite(ring).all():
        raise RegionError(f"feature {feature_id!r}: non-finite coordinates")
    jumps = np.abs(np.diff(ring[:, 0]))
    if (jumps > MAX_LON_JUMP).any():
        raise RegionError(
            f"feature {feature_id!r}: ring jumps more than 180 degrees of longitude; "
            "split antimeridian-crossing polygons before loading"
        )
    return ring


def _parts_from_geometry(geometry: Mapping[str, Any], feature_id: str) -> list[PolygonPart]:
    if not geometry:
        raise RegionError(f"feature {feature_id!r}: missing geometry")
    kind = geometry.get("type")
    coords = geometry.get("coordinates")
    if kind == "Polygon":
        polygons = [coords]
    elif kind == "MultiPolygon":
        polygons = coords
    else:
        raise RegionError(f"feature {feature_id!r}: unsupported geometry type {kind!r}")
    parts = []
    for poly in polygons:
        if not poly:
            raise RegionError(f"feature {feature_id!r}: empty polygon")
        parts.append(PolygonPart.from_rings([_ring_array(r, feature_id) for r in poly]))
    if not parts:
        raise RegionError(f"feature {feature_id!r}: empty geometry")
    return parts


def load_regions(
    geojson: Mapping[str, Any],
    population_table: Mapping[str, float] | None = None,
    cells_per_axis: int | None = None,
) -> RegionSet:
    """Build a ``RegionSet`` from a GeoJSON FeatureCollection.

    Features need a ``region_id`` property; ``name`` and ``country_id`` are
    optional (``country_id`` defaults to the region's own id). Regions
    without an entry in ``population_table`` load with ``population=None``.
    """
    if geojson.get("type") != "FeatureCollection":
        raise RegionError("expected a GeoJSON FeatureCollection")
    population_table = population_table or {}
    regions = []
    seen: set[str] = set()
    for n, feature in enumerate(geojson.get("features", [])):
        props = feature.get("properties") or {}
        if props.get("region_id") in (None, ""):
            raise RegionError(f"feature #{n} has no region_id property")
        rid = str(props["region_id"])
        if rid in seen:
            raise RegionError(f"duplicate region_id {rid!r}")
        seen.add(rid)
        parts = _parts_from_geometry(feature.get("geometry"), rid)
        country = props.get("country_id")
        pop = population_table.get(rid)
        regions.append(Region(
            region_id=rid,
            name=str(props.get("name", rid)),
            country_id=str(country) if country not in (None, "") else rid,
            parts=parts,
            population=float(pop) if pop is not None else None,
        ))
    rs = RegionSet(regions, cells_per_axis)
    if population_table and rs.missing_population:
        log.warning("%d regions have no population: %s", len(rs.missing_population),
                    ", ".join(rs.missing_population[:10]))
    return rs


def read_population_csv(path: str | Path) -> dict[str, float]:
    """Read a two-column ``region_id,population`` CSV (header required)."""
    table: dict[str, float] = {}
    with open_text(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["region_id", "population"]:
            raise RegionError(f"{path}: expected header 'region_id,population'")
        for lineno, row in enumerate(reader, start=2):
            if not row or not row[0].strip():
                continue
            try:
                value = float(row[1])
            except (IndexError, ValueError) as exc:
                raise RegionError(f"{path}:{lineno}: bad population value") from exc
            if not value > 0:
                raise RegionError(f"{path}:{lineno}: population must be positive")
            table[row[0].strip()] = value
    return table


def load_regions_file(geojson_path: str | Path, population_path: str | Path | None = None) -> RegionSet:
    with open_text(geojson_path) as fh:
        data = json.load(fh)
    pop = read_population_csv(population_path) if population_path else {}
    return load_regions(data, pop)


# --------------------------------------------------------------------------
# assignment


def assign(lon: float, lat: float, rs: RegionSet) -> str | None:
    best: int | None = None
    for k in rs.index.candidates(lon, lat):
        ri, part = rs.parts[k]
        if best is not None and ri >= best:
            continue
        if part_contains(part, lon, lat):
            best = ri
    return rs.regions[best].region_id if best is not None else None


def assign_brute_force(lon: float, lat: float, rs: RegionSet) -> str | None:
    """Exhaustive scan without any bounding-box pruning."""
    hits = []
    for region in rs.regions:
        for part in region.parts:
            on_edge = any(point_in_ring_boundary(lon, lat, ring) for ring in part.rings)
            if on_edge or sum(ring_crossings(lon, lat, ring) for ring in part.rings) % 2 == 1:
                hits.append(region.region_id)
                break
    return min(hits) if hits else None


def assign_points(lon: np.ndarray, lat: np.ndarray, rs: RegionSet, threads: int = 1) -> np.ndarray:
    """Indexed assignment of point arrays.

    Returns an int array of positions into ``rs.regions`` with ``-1`` for
    unassigned points. ``threads`` splits the points into contiguous blocks;
    the result does not depend on it.
    """
    lon = np.asarray(lon, dtype=float)
    lat = np.asarray(lat, dtype=float)
    if threads > 1 and len(lon) > 1:
        blocks = np.array_split(np.arange(len(lon)), threads)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = pool.map(lambda b: _assign_points_indexed(lon[b], lat[b], rs), blocks)
            return np.concatenate(list(parts))
    return _assign_points_indexed(lon, lat, rs)


def _assign_points_indexed(lon: np.ndarray, lat: np.ndarray, rs: RegionSet) -> np.ndarray:
    out = np.full(len(lon), -1, dtype=np.int64)
    if len(lon) == 0 or not rs.parts:
        return out
    idx = rs.index
    ci, cj = idx.cells_of(lon, lat)
    cell = ci * idx.ny + cj
    order = np.argsort(cell, kind="stable")
    sorted_cells = cell[order]
    n_cells = idx.nx * idx.ny
    starts = np.searchsorted(sorted_cells, np.arange(n_cells + 1))

    for k, (ri, part) in enumerate(rs.parts):
        cx0, cy0, cx1, cy1 = idx.part_cells[k]
        slices = [
            order[starts[i * idx.ny + cy0]:starts[i * idx.ny + cy1 + 1]]
            for i in range(cx0, cx1 + 1)
        ]
        cand = np.concatenate(slices) if slices else np.empty(0, dtype=np.int64)
        if not len(cand):
            continue
        # a smaller region index already claimed these points
        current = out[cand]
        cand = cand[(current == -1) | (current > ri)]
        x, y = lon[cand], lat[cand]
        x_min, y_min, x_max, y_max = part.bbox
        keep = (x >= x_min) & (x <= x_max) & (y >= y_min) & (y <= y_max)
        cand, x, y = cand[keep], x[keep], y[keep]
        if not len(cand):
            continue
        inside = part_contains_many(part, x, y)
        out[cand[inside]] = ri
    return out


def assign_points_brute_force(lon: np.ndarray, lat: np.ndarray, rs: RegionSet) -> np.ndarray:
    """Vectorised exhaustive scan: every point against every polygon part."""
    lon = np.asarray(lon, dtype=float)
    lat = np.asarray(lat, dtype=float)
    out = np.full(len(lon), -1, dtype=np.int64)
    # descending order so smaller region indices overwrite larger ones
    for ri in range(len(rs.regions) - 1, -1, -1):
        region = rs.regions[ri]
        hit = np.zeros(len(lon), dtype=bool)
        for part in region.parts:
            hit |= part_contains_many(part, lon, lat)
        out[hit] = ri
    return out


@dataclass(frozen=True)
class AssignedRecord:
    record: MediaRecord
    region_id: str | None

    @property
    def object_id(self) -> str:
        return self.record.object_id

    @property
    def user_id(self) -> str:
        return self.record.user_id

    @property
    def taken_date(self) -> str:
        return self.record.taken_date


def assign_batch(
    records: Iterable[MediaRecord],
    rs: RegionSet,
    threads: int = 1,
    batch_size: int = 100_000,
) -> Iterator[AssignedRecord]:
    """Assign a stream of records, batch by batch, preserving order."""
    batch: list[MediaRecord] = []

    def flush() -> Iterator[AssignedRecord]:
        lon = np.fromiter((r.lon for r in batch), dtype=float, count=len(batch))
        lat = np.fromiter((r.lat for r in batch), dtype=float, count=len(batch))
        idx = assign_points(lon, lat, rs, threads=threads)
        for rec, ri in zip(batch, idx.tolist()):
            yield AssignedRecord(rec, rs.regions[ri].region_id if ri >= 0 else None)

    for rec in records:
        batch.append(rec)
        if len(batch) >= batch_size:
            yield from flush()
            batch = []
    if batch:
        yield from flush()


ASSIGNED_COLUMNS = ("object_id", "user_id", "taken_date", "region_id")


def write_assigned(assigned: Iterable[AssignedRecord], out) -> dict[str, int]:
    """Write ``object_id,user_id,taken_date,region_id``; empty region = unassigned."""
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(ASSIGNED_COLUMNS)
    counts = {"rows": 0, "assigned": 0, "unassigned": 0}
    for a in assigned:
        writer.writerow([a.record.object_id, a.record.user_id, a.record.taken_date, a.region_id or ""])
        counts["rows"] += 1
        counts["assigned" if a.region_id else "unassigned"] += 1
    return counts


@dataclass(frozen=True)
class AssignedRow:
    """An assigned record as read back from ``assigned.csv``."""

    object_id: str
    user_id: str
    taken_date: str
    region_id: str | None


def read_assigned(path: str | Path) -> Iterator[AssignedRow]:
    with open_text(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return
        if tuple(header) != ASSIGNED_COLUMNS:
            raise RegionError(f"{path}: unexpected assigned header {header}")
        for row in reader:
            yield AssignedRow(row[0], row[1], row[2], row[3] or None)
