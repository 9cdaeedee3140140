"""Power-law scaling fits on log-log axes, residual rankings, log-normal fits.

``fit_power_law`` regresses log10(A) on log10(p) by ordinary least squares;
the slope is the scaling exponent and the intercept the log10 prefactor.
Rows with A = 0 cannot be logged and are dropped from the fit (but counted).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from geoscale.metrics import AttractivenessTable

LINEAR_TOLERANCE = 1e-12
CONFIDENCE = 0.95


class FitError(ValueError):
    pass


def classify(beta: float) -> str:
    if not math.isfinite(beta):
        raise FitError(f"cannot classify non-finite exponent {beta}")
    if abs(beta - 1.0) <= LINEAR_TOLERANCE:
        return "linear"
    return "sublinear" if beta < 1.0 else "superlinear"


@dataclass(frozen=True)
class ScalingFit:
    beta: float
    log_a: float
    ci_low: float | None
    ci_high: float | None
    r2: float
    n: int
    classification: str
    excluded_zero_rows: int
    se_beta: float | None = None
    region_ids: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        d = asdict(self)
        del d["region_ids"]
        return d


def ols_loglog(log_p: np.ndarray, log_a: np.ndarray) -> tuple[float, float, float | None, float, float | None]:
    """Slope, intercept, slope standard error, R^2 and residual variance.

    Centred sums in a fixed order keep repeated runs bit-identical.
    """
    n = len(log_p)
    mx = math.fsum(log_p) / n
    my = math.fsum(log_a) / n
    dx = log_p - mx
    dy = log_a - my
    sxx = math.fsum(dx * dx)
    if sxx == 0.0:
        raise FitError("population has zero variance on the log scale; slope undefined")
    sxy = math.fsum(dx * dy)
    syy = math.fsum(dy * dy)
    slope = sxy / sxx
    intercept = my - slope * mx
    resid = log_a - (intercept + slope * log_p)
    ssr = math.fsum(resid * resid)
    r2 = 1.0 - ssr / syy if syy > 0 else 1.0
    r2 = min(max(r2, 0.0), 1.0)
    if n < 3:
        return slope, intercept, None, r2, None
    s2 = ssr / (n - 2)
    return slope, intercept, math.sqrt(s2 / sxx), r2, s2


def fit_arrays(
    population: Sequence[float],
    attractiveness: Sequence[float],
    region_ids: Sequence[str] | None = None,
) -> ScalingFit:
    p = np.asarray(population, dtype=float)
    a = np.asarray(attractiveness, dtype=float)
    if p.shape != a.shape:
        raise FitError("population and attractiveness differ in length")
    if (p <= 0).any():
        raise FitError("populations must be positive")
    if (a < 0).any():
        raise FitError("attractiveness must be non-negative")
    ids = list(region_ids) if region_ids is not None else [str(i) for i in range(len(p))]
    usable = a > 0
    excluded = int((~usable).sum())
    p, a = p[usable], a[usable]
    ids = [i for i, u in zip(ids, usable) if u]
    n = len(p)
    if n < 2:
        raise FitError(f"need at least 2 rows with A > 0 to fit, got {n}")

    slope, intercept, se, r2, _ = ols_loglog(np.log10(p), np.log10(a))
    ci_low = ci_high = None
    if se is not None:
        t = float(stats.t.ppf(0.5 + CONFIDENCE / 2, n - 2))
        ci_low, ci_high = slope - t * se, slope + t * se
    return ScalingFit(
        beta=slope, log_a=intercept, ci_low=ci_low, ci_high=ci_high, r2=r2, n=n,
        classification=classify(slope), excluded_zero_rows=excluded, se_beta=se,
        region_ids=tuple(ids),
    )


def fit_power_law(table: AttractivenessTable) -> ScalingFit:
    """Fit ``A = a * p**beta`` to a table.

    With exactly two usable rows the line is fitted but no confidence
    interval is reported; fewer than two rows is an error.
    """
    return fit_arrays(
        [r.population for r in table.rows],
        [r.attractiveness for r in table.rows],
        [r.region_id for r in table.rows],
    )


@dataclass(frozen=True)
class ResidualRow:
    region_id: str
    residual: float


def residuals(table: AttractivenessTable, fit: ScalingFit) -> list[ResidualRow]:
    """log10(observed) - log10(expected) for every fitted row, largest first."""
    fitted = set(fit.region_ids)
    rows = []
    for r in table.rows:
        if r.region_id not in fitted or r.attractiveness <= 0:
            continue
        expected = fit.log_a + fit.beta * math.log10(r.population)
        rows.append(ResidualRow(r.region_id, math.log10(r.attractiveness) - expected))
    rows.sort(key=lambda x: (-x.residual, x.region_id))
    return rows


@dataclass(frozen=True)
class LogNormalFit:
    mu: float
    sigma: float
    n: int
    method: str = "moments of natural logs"

    def pdf_log(self, log_x: np.ndarray) -> np.ndarray:
        """Density of ln(x) under the fit."""
        if self.sigma == 0:
            return np.full(np.shape(log_x), np.nan)
        return stats.norm.pdf(log_x, loc=self.mu, scale=self.sigma)


def fit_lognormal(values: Sequence[float]) -> LogNormalFit:
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or len(v) < 2:
        raise FitError("need at least 2 values for a log-normal fit")
    bad = np.flatnonzero(~(v > 0))
    if len(bad):
        raise FitError(f"value at index {int(bad[0])} is not positive: {v[bad[0]]!r}")
    logs = np.log(v)
    if np.all(logs == logs[0]):
        # the fsum mean can miss the common value by an ulp
        return LogNormalFit(mu=float(logs[0]), sigma=0.0, n=len(v))
    mu = math.fsum(logs) / len(logs)
    var = math.fsum((logs - mu) ** 2) / (len(logs) - 1)
    return LogNormalFit(mu=mu, sigma=math.sqrt(var), n=len(v))


@dataclass(frozen=True)
class HistogramBin:
    bin_low: float
    bin_high: float
    bin_center: float
    count: int
    empirical_density: float
    fitted_density: float


def histogram_lognormal(values: Sequence[float], bins: int) -> tuple[list[HistogramBin], LogNormalFit]:
    """Log-spaced histogram with densities over ln(x), plus the fitted curve.

    ``empirical_density * (ln(bin_high) - ln(bin_low))`` summed over bins is 1.
    """
    if bins < 2:
        raise FitError("need at least 2 bins")
    fit = fit_lognormal(values)
    logs = np.log(np.asarray(values, dtype=float))
    lo, hi = float(logs.min()), float(logs.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    counts, _ = np.histogram(logs, bins=edges)
    widths = np.diff(edges)
    density = counts / (len(logs) * widths)
    centers = 0.5 * (edges[:-1] + edges[1:])
    fitted = fit.pdf_log(centers)
    bounds = np.exp(edges)
    if logs.min() < logs.max():
        # report the data extremes exactly rather than exp(log(x))
        v = np.asarray(values, dtype=float)
        bounds[0], bounds[-1] = v.min(), v.max()
    table = [
        HistogramBin(
            float(bounds[k]), float(bounds[k + 1]), float(np.exp(centers[k])),
            int(counts[k]), float(density[k]), float(fitted[k]),
        )
        for k in range(bins)
    ]
    return table, fit


# --------------------------------------------------------------------------
# output


def write_fit(fit: ScalingFit, path: str | Path, extra: dict | None = None) -> None:
    payload = fit.to_dict()
    payload["metadata"] = {
        "log_base": 10,
        "ci_method": "t-based OLS slope interval" if fit.ci_low is not None else "none (n < 3)",
        "confidence": CONFIDENCE,
        "zero_rows": "excluded from fit",
        **(extra or {}),
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_fit(path: str | Path, table: AttractivenessTable | None = None) -> ScalingFit:
    """Load a fit written by ``write_fit``; ``table`` restores the fitted row ids."""
    d = json.loads(Path(path).read_text())
    d.pop("metadata", None)
    ids = tuple(r.region_id for r in table.rows if r.attractiveness > 0) if table is not None else ()
    return ScalingFit(**d, region_ids=ids)


def write_residuals(rows: Sequence[ResidualRow], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["region_id", "residual"])
        for r in rows:
            writer.writerow([r.region_id, repr(r.residual)])


def write_histogram(table: Sequence[HistogramBin], fit: LogNormalFit, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["bin_low", "bin_high", "bin_center", "count", "empirical_density", "fitted_density"])
        for b in table:
            writer.writerow([repr(b.bin_low), repr(b.bin_high), repr(b.bin_center), b.count,
                             repr(b.empirical_density), repr(b.fitted_density)])
    path.with_suffix(".meta.json").write_text(json.dumps(
        {"mu": fit.mu, "sigma": fit.sigma, "n": fit.n, "method": fit.method, "log": "natural"},
        indent=2, sort_keys=True,
    ) + "\n")
