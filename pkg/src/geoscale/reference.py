"""Published full-dataset results, kept as documented reference values.

They come from the complete YFCC100M collection (about 100M objects) and
the UN 2010 migrant-stock matrix, neither of which ships with this package,
so nothing here is reproduced by the test suite. They are useful for
comparing a run on the real data against the published figures.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class ReferenceFit:
    label: str
    beta: float
    ci_low: float
    ci_high: float
    n: int
    r2: float | None = None
    # only a shared range is reported for some fits
    r2_range: tuple[float, float] | None = None


FLICKR_COUNTRIES = ReferenceFit("flickr countries", 0.488, 0.377, 0.599, n=238, r2=0.27)
MIGRATION_COUNTRIES = ReferenceFit("migration countries", 0.640, 0.551, 0.730, n=238, r2=0.49)
# 50 states plus Washington D.C.
FLICKR_US_STATES = ReferenceFit("flickr US states", 0.864, 0.530, 1.198, n=51, r2=0.36)
CITY_COUNT = ReferenceFit("cities per country", 0.836, 0.762, 0.910, n=238, r2_range=(0.77, 0.83))
CAPITAL_POPULATION = ReferenceFit("capital population", 0.770, 0.722, 0.818, n=238, r2_range=(0.77, 0.83))

REFERENCE_FITS = {
    "flickr": FLICKR_COUNTRIES,
    "migration": MIGRATION_COUNTRIES,
    "flickr_us_states": FLICKR_US_STATES,
    "city_count": CITY_COUNT,
    "capital_population": CAPITAL_POPULATION,
}

# log-normal sigma of country populations and of both attractiveness measures
LOGNORMAL_SIGMA_RANGE = (2.3, 2.4)

# share of all objects taken by users with a defined home, and by foreign users
DEFINED_HOME_FRACTION = 0.724
FOREIGN_FRACTION = 0.152

# US states ranked by log-residual of the Flickr fit
US_STATE_TOP = ("Washington D.C.", "Nevada", "Hawaii")
US_STATE_NEXT = ("Wyoming", "New York", "California")
US_STATE_BOTTOM = ("Delaware", "Oklahoma", "Mississippi")
