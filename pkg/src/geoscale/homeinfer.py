"""Home-country inference from per-country user activity.

A user lives in country ``c`` when ``c`` is the unique country with the most
media objects *and* the unique country with the most distinct active days.
Any tie, or disagreement between the two criteria, leaves the home undefined.
"""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

from geoscale.geoassign import RegionSet
from geoscale.ingest import open_text


class AssignedLike(Protocol):
    user_id: str
    taken_date: str
    region_id: str | None


@dataclass(frozen=True)
class CountryActivity:
    objects: int
    days: int


@dataclass
class UserProfile:
    user_id: str
    per_country: dict[str, CountryActivity]

    @property
    def total_objects(self) -> int:
        return sum(a.objects for a in self.per_country.values())


@dataclass(frozen=True)
class HomeAssignment:
    user_id: str
    home_country: str | None


@dataclass
class ProfileAccumulator:
    """Mergeable partial state: object counts plus the set of active dates.

    Partial accumulators from disjoint slices of the input merge by summing
    counts and unioning date sets; ``finalize`` turns date sets into counts.
    """

    objects: dict[str, dict[str, int]] = field(default_factory=lambda: defaultdict(lambda: defaultdict(int)))
    dates: dict[str, dict[str, set[str]]] = field(default_factory=lambda: defaultdict(lambda: defaultdict(set)))

    def add(self, user_id: str, country_id: str, taken_date: str) -> None:
        self.objects[user_id][country_id] += 1
        self.dates[user_id][country_id].add(taken_date)

    def merge(self, other: "ProfileAccumulator") -> "ProfileAccumulator":
        for user, per in other.objects.items():
            for country, n in per.items():
                self.objects[user][country] += n
                self.dates[user][country] |= other.dates[user][country]
        return self

    def finalize(self) -> dict[str, UserProfile]:
        profiles = {}
        for user in sorted(self.objects):
            per = self.objects[user]
            profiles[user] = UserProfile(user, {
                c: CountryActivity(per[c], len(self.dates[user][c])) for c in sorted(per)
            })
        return profiles


def accumulate(assigned: Iterable[AssignedLike], rs: RegionSet) -> dict[str, UserProfile]:
    """Per-user, per-country object and active-day counts.

    Regions roll up to their ``country_id``; unassigned records are skipped.
    """
    acc = ProfileAccumulator()
    for a in assigned:
        if a.region_id is None:
            continue
        acc.add(a.user_id, rs.country_of(a.region_id), a.taken_date)
    return acc.finalize()


def _unique_argmax(values: Mapping[str, int]) -> str | None:
    top = max(values.values())
    winners = [k for k, v in values.items() if v == top]
    return winners[0] if len(winners) == 1 else None


def infer_home(profile: UserProfile) -> HomeAssignment:
    if not profile.per_country:
        raise ValueError(f"user {profile.user_id!r} has an empty profile")
    by_objects = _unique_argmax({c: a.objects for c, a in profile.per_country.items()})
    by_days = _unique_argmax({c: a.days for c, a in profile.per_country.items()})
    home = by_objects if by_objects is not None and by_objects == by_days else None
    return HomeAssignment(profile.user_id, home)


def infer_homes(profiles: Mapping[str, UserProfile]) -> dict[str, str | None]:
    return {u: infer_home(p).home_country for u, p in profiles.items()}


@dataclass(frozen=True)
class Coverage:
    defined_home_fraction: float
    foreign_fraction: float
    total_objects: int
    defined_home_objects: int
    foreign_objects: int

    def to_dict(self) -> dict:
        return {
            "defined_home_fraction": self.defined_home_fraction,
            "foreign_fraction": self.foreign_fraction,
            "total_objects": self.total_objects,
            "defined_home_objects": self.defined_home_objects,
            "foreign_objects": self.foreign_objects,
        }


def coverage_stats(profiles: Mapping[str, UserProfile], homes: Mapping[str, str | None]) -> Coverage:
    """Share of objects owned by users with a defined home, and share taken abroad."""
    total = defined = foreign = 0
    for user, profile in profiles.items():
        n = profile.total_objects
        total += n
        home = homes.get(user)
        if home is None:
            continue
        defined += n
        foreign += sum(a.objects for c, a in profile.per_country.items() if c != home)
    if total == 0:
        return Coverage(0.0, 0.0, 0, 0, 0)
    return Coverage(defined / total, foreign / total, total, defined, foreign)


HOMES_COLUMNS = ("user_id", "home_country")


def write_homes(homes: Mapping[str, str | None], out) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(HOMES_COLUMNS)
    for user in sorted(homes):
        writer.writerow([user, homes[user] or ""])


def read_homes(path: str | Path) -> dict[str, str | None]:
    with open_text(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != HOMES_COLUMNS:
            raise ValueError(f"{path}: expected header user_id,home_country")
        return {row[0]: (row[1] or None) for row in reader if row}


def write_coverage(cov: Coverage, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cov.to_dict(), indent=2, sort_keys=True) + "\n")
