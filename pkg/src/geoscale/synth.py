"""Seeded synthetic attractiveness tables and synthetic region worlds.

This is the only module that draws random numbers; every entry point takes
an explicit seed.
"""

from __future__ import annotations

import math

import numpy as np

from geoscale.metrics import AttractivenessTable, TableRow

# median country population is a few million; only the spread matters for fits
DEFAULT_LOG_POP_MEAN = math.log(5e6)


def generate_synthetic(
    seed: int,
    n_regions: int,
    beta_true: float,
    sigma_pop: float = 2.3,
    noise_sigma: float = 0.0,
    log10_a: float = 0.0,
    log_pop_mean: float = DEFAULT_LOG_POP_MEAN,
) -> AttractivenessTable:
    """Draw populations from a log-normal and set ``A = a * p**beta * noise``.

    ``sigma_pop`` and ``noise_sigma`` are standard deviations of natural logs;
    the multiplicative noise is ``exp(N(0, noise_sigma))``.
    """
    if n_regions < 3:
        raise ValueError("n_regions must be at least 3")
    rng = np.random.default_rng(seed)
    pop = np.exp(rng.normal(log_pop_mean, sigma_pop, n_regions))
    noise = rng.normal(0.0, noise_sigma, n_regions) if noise_sigma > 0 else np.zeros(n_regions)
    attr = 10.0 ** (log10_a + beta_true * np.log10(pop)) * np.exp(noise)
    width = len(str(n_regions - 1))
    rows = [TableRow(f"S{k:0{width}d}", float(p), float(a)) for k, (p, a) in enumerate(zip(pop, attr))]
    meta = {
        "seed": seed, "beta_true": beta_true, "sigma_pop": sigma_pop,
        "noise_sigma": noise_sigma, "log10_a": log10_a,
    }
    return AttractivenessTable(rows, "synthetic", [], meta)


def lattice_world(
    seed: int,
    nx: int = 12,
    ny: int = 10,
    edge_vertices: int = 4,
    bounds: tuple[float, float, float, float] = (-170.0, -80.0, 170.0, 80.0),
    holes_every: int = 7,
) -> dict:
    """A GeoJSON FeatureCollection of ``nx * ny`` regions tiling ``bounds``.

    Interior lattice vertices are jittered so edges are not axis-aligned, and
    neighbouring regions share their boundary vertices exactly. Every
    ``holes_every``-th region gets a square hole, filled by a small island
    region of its own.
    """
    rng = np.random.default_rng(seed)
    k = edge_vertices
    x0, y0, x1, y1 = bounds
    xs = np.linspace(x0, x1, nx * k + 1)
    ys = np.linspace(y0, y1, ny * k + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    sx, sy = (xs[1] - xs[0]) * 0.3, (ys[1] - ys[0]) * 0.3
    gx[1:-1, 1:-1] += rng.uniform(-sx, sx, (nx * k - 1, ny * k - 1))
    gy[1:-1, 1:-1] += rng.uniform(-sy, sy, (nx * k - 1, ny * k - 1))

    features = []
    for i in range(nx):
        for j in range(ny):
            idx = [(i * k + a, j * k) for a in range(k)]
            idx += [((i + 1) * k, j * k + b) for b in range(k)]
            idx += [(i * k + a, (j + 1) * k) for a in range(k, 0, -1)]
            idx += [(i * k, j * k + b) for b in range(k, 0, -1)]
            ring = [[float(gx[a, b]), float(gy[a, b])] for a, b in idx]
            ring.append(ring[0])
            rid = f"R{i:02d}{j:02d}"
            rings = [ring]
            n = i * ny + j
            if holes_every and n % holes_every == 0:
                cx = float(gx[i * k + k // 2, j * k + k // 2])
                cy = float(gy[i * k + k // 2, j * k + k // 2])
                h = min(sx, sy)
                hole = [[cx - h, cy - h], [cx - h, cy + h], [cx + h, cy + h], [cx + h, cy - h], [cx - h, cy - h]]
                rings.append(hole)
                island = [[cx - h / 2, cy - h / 2], [cx + h / 2, cy - h / 2],
                          [cx + h / 2, cy + h / 2], [cx - h / 2, cy + h / 2], [cx - h / 2, cy - h / 2]]
                features.append(_feature(f"I{i:02d}{j:02d}", island, rid))
            features.append(_feature(rid, rings, rid))
    return {"type": "FeatureCollection", "features": features}


def _feature(rid: str, rings: list, country: str) -> dict:
    if rings and isinstance(rings[0][0], float):
        rings = [rings]
    return {
        "type": "Feature",
        "properties": {"region_id": rid, "name": rid, "country_id": country},
        "geometry": {"type": "Polygon", "coordinates": rings},
    }
