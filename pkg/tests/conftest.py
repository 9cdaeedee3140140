from __future__ import annotations

from importlib import resources
from pathlib import Path

import pytest

from geoscale.geoassign import load_regions

ACCEPTANCE_RESULTS: list[tuple[str, bool, float, str]] = []


def square(x0, y0, x1, y1):
    return [[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]]


def feature(rid, rings, country=None, kind="Polygon"):
    props = {"region_id": rid, "name": rid}
    if country:
        props["country_id"] = country
    return {"type": "Feature", "properties": props, "geometry": {"type": kind, "coordinates": rings}}


def collection(*features):
    return {"type": "FeatureCollection", "features": list(features)}


@pytest.fixture
def two_squares():
    gj = collection(feature("A", [square(0, 0, 1, 1)]), feature("B", [square(2, 2, 3, 3)]))
    return load_regions(gj, {"A": 100, "B": 200})


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return Path(str(resources.files("geoscale") / "fixtures"))


@pytest.fixture(scope="session")
def toy_dir(fixtures_dir) -> Path:
    return fixtures_dir / "toy_world"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, seconds, detail in ACCEPTANCE_RESULTS:
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"[{status}] {name} ({seconds:.2f}s) {detail}")
