"""Parse and prune raw tab-separated media metadata into ``MediaRecord`` streams.

Records without usable coordinates are dropped as ``not_geotagged``, records
whose timestamp does not match ``YYYY-MM-DD HH:MM:SS(.fraction)?`` are dropped
as ``bad_date``, and anything structurally broken is ``malformed``. Nothing
about a single line is ever fatal; only an unreadable stream raises.
"""

from __future__ import annotations

import csv
import gzip
import io
import re
from collections.abc import Iterable, Iterator
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from enum import Enum
from itertools import islice
from pathlib import Path
from typing import IO

GZIP_MAGIC = b"\x1f\x8b"

_TIMESTAMP_RE = re.compile(
    r"^(\d{4})-(\d{2})-(\d{2}) (\d{2}):(\d{2}):(\d{2})(?:\.(\d+))?$"
)

RECORD_COLUMNS = ("object_id", "user_id", "taken_at", "lon", "lat")


class IngestError(RuntimeError):
    """Raised when the input stream itself cannot be read."""


class SkipReason(str, Enum):
    NOT_GEOTAGGED = "not_geotagged"
    BAD_DATE = "bad_date"
    MALFORMED = "malformed"


@dataclass(frozen=True)
class RawLine:
    line_number: int
    fields: list[str]


@dataclass(frozen=True, slots=True)
class MediaRecord:
    object_id: str
    user_id: str
    taken_at: datetime
    lon: float
    lat: float

    @property
    def taken_date(self) -> str:
        return self.taken_at.date().isoformat()


@dataclass(frozen=True)
class Schema:
    """Column positions of the five fields we use.

    ``width`` is the exact number of tab-separated cells a line must have;
    it defaults to one past the largest index.
    """

    object_id: int = 0
    user_id: int = 1
    taken_at: int = 2
    lon: int = 3
    lat: int = 4
    width: int | None = None

    def __post_init__(self) -> None:
        idx = [self.object_id, self.user_id, self.taken_at, self.lon, self.lat]
        if min(idx) < 0:
            raise ValueError("schema column indices must be non-negative")
        if len(set(idx)) != len(idx):
            raise ValueError("schema column indices must be distinct")
        if self.width is None:
            object.__setattr__(self, "width", max(idx) + 1)
        elif self.width <= max(idx):
            raise ValueError(f"schema width {self.width} too small for index {max(idx)}")

    @classmethod
    def parse(cls, spec: str | None) -> "Schema":
        """Build a schema from ``"0,1,2,3,4"`` or ``"object_id=0,...,width=23"``."""
        if not spec:
            return cls()
        parts = [p.strip() for p in spec.split(",") if p.strip()]
        if all("=" not in p for p in parts):
            if len(parts) not in (5, 6):
                raise ValueError(f"positional schema needs 5 or 6 integers, got {spec!r}")
            names = list(RECORD_COLUMNS) + ["width"]
            return cls(**{n: int(v) for n, v in zip(names, parts)})
        kwargs: dict[str, int] = {}
        for p in parts:
            key, _, value = p.partition("=")
            key = key.strip()
            if key not in RECORD_COLUMNS and key != "width":
                raise ValueError(f"unknown schema key {key!r}")
            kwargs[key] = int(value)
        return cls(**kwargs)

    def to_spec(self) -> str:
        return ",".join(f"{k}={v}" for k, v in asdict(self).items())


@dataclass
class PruneStats:
    total: int = 0
    kept: int = 0
    dropped_not_geotagged: int = 0
    dropped_bad_date: int = 0
    dropped_malformed: int = 0

    def count(self, outcome: MediaRecord | SkipReason) -> None:
        self.total += 1
        if isinstance(outcome, MediaRecord):
            self.kept += 1
        elif outcome is SkipReason.NOT_GEOTAGGED:
            self.dropped_not_geotagged += 1
        elif outcome is SkipReason.BAD_DATE:
            self.dropped_bad_date += 1
        else:
            self.dropped_malformed += 1

    def merge(self, other: "PruneStats") -> "PruneStats":
        return PruneStats(**{k: v + getattr(other, k) for k, v in asdict(self).items()})

    def is_consistent(self) -> bool:
        dropped = self.dropped_not_geotagged + self.dropped_bad_date + self.dropped_malformed
        values = asdict(self).values()
        return self.total == self.kept + dropped and all(v >= 0 for v in values)

    def to_dict(self) -> dict[str, int]:
        return asdict(self)


def parse_timestamp(text: str) -> datetime | None:
    m = _TIMESTAMP_RE.match(text)
    if m is None:
        return None
    year, month, day, hour, minute, second, frac = m.groups()
    micro = int((frac or "0")[:6].ljust(6, "0"))
    try:
        return datetime(
            int(year), int(month), int(day), int(hour), int(minute), int(second),
            micro, tzinfo=timezone.utc,
        )
    except ValueError:
        return None


def _parse_coordinate(text: str) -> float | None | SkipReason:
    text = text.strip()
    if not text:
        return None
    try:
        return float(text)
    except ValueError:
        return SkipReason.MALFORMED


def parse_record(raw: RawLine, schema: Schema) -> MediaRecord | SkipReason:
    fields = raw.fields
    if len(fields) != schema.width:
        return SkipReason.MALFORMED
    object_id = fields[schema.object_id].strip()
    user_id = fields[schema.user_id].strip()
    if not object_id or not user_id:
        return SkipReason.MALFORMED

    lon = _parse_coordinate(fields[schema.lon])
    lat = _parse_coordinate(fields[schema.lat])
    if lon is SkipReason.MALFORMED or lat is SkipReason.MALFORMED:
        return SkipReason.MALFORMED
    if lon is None or lat is None:
        return SkipReason.NOT_GEOTAGGED
    # NaN fails both comparisons and is rejected here as well
    if not (-180.0 <= lon <= 180.0 and -90.0 <= lat <= 90.0):
        return SkipReason.NOT_GEOTAGGED

    taken_at = parse_timestamp(fields[schema.taken_at].strip())
    if taken_at is None:
        return SkipReason.BAD_DATE
    return MediaRecord(object_id, user_id, taken_at, lon, lat)


def _parse_chunk(chunk: list[RawLine], schema: Schema) -> tuple[list[MediaRecord], PruneStats]:
    stats = PruneStats()
    kept = []
    for raw in chunk:
        outcome = parse_record(raw, schema)
        stats.count(outcome)
        if isinstance(outcome, MediaRecord):
            kept.append(outcome)
    return kept, stats


def _chunks(lines: Iterable[RawLine], size: int) -> Iterator[list[RawLine]]:
    it = iter(lines)
    while chunk := list(islice(it, size)):
        yield chunk


def prune_stream(
    lines: Iterable[RawLine],
    schema: Schema,
    threads: int = 1,
    chunk_size: int = 20_000,
) -> tuple[Iterator[MediaRecord], PruneStats]:
    """Lazily filter ``lines`` down to valid records.

    Returns the record iterator together with a ``PruneStats`` object that
    is filled in as the iterator is consumed; read it after exhaustion.
    With ``threads > 1`` chunks are parsed in worker processes but records
    still come out in input order.
    """
    stats = PruneStats()

    def serial() -> Iterator[MediaRecord]:
        for raw in lines:
            outcome = parse_record(raw, schema)
            stats.count(outcome)
            if isinstance(outcome, MediaRecord):
                yield outcome

    def parallel() -> Iterator[MediaRecord]:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            chunks = _chunks(lines, chunk_size)
            # bounded look-ahead keeps memory per worker constant
            pending = []
            for chunk in chunks:
                pending.append(pool.submit(_parse_chunk, chunk, schema))
                if len(pending) >= 2 * threads:
                    yield from _drain(pending.pop(0))
            for fut in pending:
                yield from _drain(fut)

    def _drain(fut) -> Iterator[MediaRecord]:
        kept, part = fut.result()
        for name, value in part.to_dict().items():
            setattr(stats, name, getattr(stats, name) + value)
        yield from kept

    return (serial() if threads <= 1 else parallel()), stats


def prune(lines: Iterable[RawLine], schema: Schema, threads: int = 1) -> tuple[list[MediaRecord], PruneStats]:
    records, stats = prune_stream(lines, schema, threads=threads)
    return list(records), stats


def open_text(path: str | Path) -> IO[str]:
    """Open ``path`` for reading as UTF-8, transparently gunzipping by magic bytes."""
    path = Path(path)
    try:
        with path.open("rb") as fh:
            magic = fh.read(2)
        if magic == GZIP_MAGIC:
            return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8", errors="strict", newline="")
        return path.open("r", encoding="utf-8", errors="strict", newline="")
    except OSError as exc:
        raise IngestError(f"cannot open {path}: {exc}") from exc


def read_raw_lines(path: str | Path) -> Iterator[RawLine]:
    """Yield tab-split lines of ``path``; a line that fails to decode becomes an empty row."""
    path = Path(path)
    try:
        with path.open("rb") as probe:
            gz = probe.read(2) == GZIP_MAGIC
    except OSError as exc:
        raise IngestError(f"cannot open {path}: {exc}") from exc
    opener = gzip.open if gz else open
    line_number = 0
    try:
        with opener(path, "rb") as fh:
            for line_number, raw in enumerate(fh, start=1):
                try:
                    text = raw.decode("utf-8")
                except UnicodeDecodeError:
                    yield RawLine(line_number, [])
                    continue
                text = text.rstrip("\n").rstrip("\r")
                if not text:
                    continue
                yield RawLine(line_number, text.split("\t"))
    except (OSError, EOFError) as exc:
        raise IngestError(f"{path}: read failed after line {line_number}: {exc}") from exc


def write_records(records: Iterable[MediaRecord], out: IO[str]) -> int:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(RECORD_COLUMNS)
    n = 0
    for r in records:
        writer.writerow([r.object_id, r.user_id, format_timestamp(r.taken_at), repr(r.lon), repr(r.lat)])
        n += 1
    return n


def read_records(path: str | Path) -> Iterator[MediaRecord]:
    with open_text(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return
        if tuple(header) != RECORD_COLUMNS:
            raise IngestError(f"{path}: unexpected record header {header}")
        for row in reader:
            taken_at = parse_timestamp(row[2])
            if taken_at is None:
                raise IngestError(f"{path}: bad timestamp {row[2]!r} in a cleaned record file")
            yield MediaRecord(row[0], row[1], taken_at, float(row[3]), float(row[4]))


def format_timestamp(ts: datetime) -> str:
    text = ts.strftime("%Y-%m-%d %H:%M:%S")
    if ts.microsecond:
        text += f".{ts.microsecond:06d}".rstrip("0")
    return text
