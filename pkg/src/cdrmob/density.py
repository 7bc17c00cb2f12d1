"""Population density grids and their relationship to behaviour.

Inhabited grid cells are ranked by population density (rank 1 = densest,
ties share their average rank). On top of that ranking:

  * overall and rank-band Spearman correlations between cell density and
    cell-mean behaviour (activity, mobility, radius of gyration); bands
    span a factor of two in rank and overlap their neighbours by half,
    so trends confined to one density regime stay visible,
  * a power-law fit to the rank-size tail (log density vs log rank,
    deep ranks only),
  * a five-class split of cells by density rank, class 1 being the
    densest handful of cells and class 5 the long sparse tail.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .geo import GridSpec
from .metrics import MetricRow

DEFAULT_AREA_BOUNDARIES = (30, 100, 1000, 10000)


class DensityError(Exception):
    """Not enough usable cells for the requested statistic."""


@dataclass
class GridDensity:
    """Per-cell aggregates over individuals whose home falls in the cell.
    Rows are sorted by (cell_i, cell_j); only inhabited cells appear."""

    grid: GridSpec
    cell_i: np.ndarray
    cell_j: np.ndarray
    population: np.ndarray
    density: np.ndarray  # individuals per km^2
    mean_activity: np.ndarray | None = None
    mean_mobility: np.ndarray | None = None
    mean_rg: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.population)

    def row_of_cell(self) -> dict[tuple[int, int], int]:
        return {(int(i), int(j)): k for k, (i, j) in enumerate(zip(self.cell_i, self.cell_j))}


def build_density(
    homes: dict[str, tuple[float, float] | None],
    grid: GridSpec,
    year_rows: dict[str, MetricRow] | None = None,
) -> GridDensity:
    """Aggregate homes (and optionally whole-year metrics) onto a grid.

    Individuals without a home are skipped; with year_rows given, means of
    activity/mobility/rg are computed per cell over its residents.
    """
    egos = [e for e in sorted(homes) if homes[e] is not None and (year_rows is None or e in year_rows)]
    if not egos:
        raise DensityError("no homed individuals to grid")
    lats = np.array([homes[e][0] for e in egos])
    lons = np.array([homes[e][1] for e in egos])
    ci, cj = grid.cells_of(lats, lons)
    cells = np.stack((ci, cj), axis=1)
    uniq, inverse = np.unique(cells, axis=0, return_inverse=True)
    pop = np.bincount(inverse, minlength=len(uniq))
    area = np.array([grid.cell_area_km2(int(i)) for i in uniq[:, 0]])
    dens = pop / area
    ma = mm = mr = None
    if year_rows is not None:
        act = np.array([year_rows[e].activity for e in egos], dtype=float)
        mob = np.array([year_rows[e].mobility_km for e in egos], dtype=float)
        rg = np.array(
            [year_rows[e].rg_km if year_rows[e].rg_km is not None else np.nan for e in egos]
        )
        ma = np.bincount(inverse, weights=act, minlength=len(uniq)) / pop
        mm = np.bincount(inverse, weights=mob, minlength=len(uniq)) / pop
        ok = ~np.isnan(rg)
        nrg = np.bincount(inverse[ok], minlength=len(uniq))
        with np.errstate(invalid="ignore"):
            mr = np.where(
                nrg > 0,
                np.bincount(inverse[ok], weights=rg[ok], minlength=len(uniq)) / np.maximum(nrg, 1),
                np.nan,
            )
    return GridDensity(grid, uniq[:, 0], uniq[:, 1], pop, dens, ma, mm, mr)


def build_density_from_counts(counts: dict[tuple[int, int], int], grid: GridSpec) -> GridDensity:
    """Grid density straight from per-cell head counts."""
    keys = sorted(k for k, v in counts.items() if v > 0)
    if not keys:
        raise DensityError("no inhabited cells")
    ci = np.array([k[0] for k in keys])
    cj = np.array([k[1] for k in keys])
    pop = np.array([counts[k] for k in keys])
    area = np.array([grid.cell_area_km2(int(i)) for i in ci])
    return GridDensity(grid, ci, cj, pop, pop / area)


def rank_desc(values: np.ndarray) -> np.ndarray:
    """Average-tie ranks, rank 1 for the largest value."""
    return rankdata(-np.asarray(values, dtype=float), method="average")


def spearman(x, y) -> float:
    """Rank correlation via Pearson on average-tie ranks."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y):
        raise ValueError("length mismatch")
    if len(x) < 3:
        raise DensityError("need at least 3 points")
    rx = rank_desc(x)
    ry = rank_desc(y)
    if np.all(rx == rx[0]) or np.all(ry == ry[0]):
        raise DensityError("zero rank variance")
    # identical or exactly reversed rankings are +-1 by definition; the
    # Pearson route loses an ulp to sqrt rounding
    if np.array_equal(rx, ry):
        return 1.0
    if np.array_equal(rx + ry, np.full(len(rx), len(rx) + 1.0)):
        return -1.0
    c = np.corrcoef(rx, ry)[0, 1]
    return float(c)


@dataclass
class BandCorrelation:
    band: int
    rank_lo: float
    rank_hi: float
    center_rank: float  # geometric mean of the band edges
    n_cells: int
    corr: float | None
    note: str = ""


def sliding_correlation(density: np.ndarray, values: np.ndarray) -> list[BandCorrelation]:
    """Spearman correlation inside half-overlapping rank bands
    [2^(k/2), 2^(k/2+1)). Bands with fewer than 3 cells or degenerate
    ranks are kept in the output with corr=None and a note."""
    density = np.asarray(density, dtype=float)
    values = np.asarray(values, dtype=float)
    ranks = rank_desc(density)
    n = len(density)
    out: list[BandCorrelation] = []
    k = 0
    while 2 ** (k / 2) <= n:
        lo = 2 ** (k / 2)
        hi = 2 ** (k / 2 + 1)
        m = (ranks >= lo) & (ranks < hi)
        ok = m & ~np.isnan(values)
        nc = int(ok.sum())
        center = math.sqrt(lo * hi)
        if nc < 3:
            out.append(BandCorrelation(k, lo, hi, center, nc, None, "too_few_cells"))
        else:
            try:
                c = spearman(density[ok], values[ok])
                out.append(BandCorrelation(k, lo, hi, center, nc, c))
            except DensityError:
                out.append(BandCorrelation(k, lo, hi, center, nc, None, "degenerate"))
        k += 1
    return out


@dataclass
class RankSizeFit:
    exponent: float  # negative slope of log density vs log rank
    intercept: float
    r2: float
    n_cells: int
    n_tail: int
    min_rank: int


def rank_size(density: np.ndarray, min_rank: int = 100, min_cells: int = 200) -> RankSizeFit:
    """Power-law exponent of the deep rank-size tail.

    Ordinary least squares of log(density) on log(rank), using only ranks
    beyond min_rank where the tail is clear of the flat dense head.
    """
    d = np.sort(np.asarray(density, dtype=float))[::-1]
    n = len(d)
    if n < min_cells:
        raise DensityError(f"need at least {min_cells} inhabited cells, have {n}")
    r = np.arange(1, n + 1)
    m = (r > min_rank) & (d > 0)
    if int(m.sum()) < 3:
        raise DensityError("tail too short for a fit")
    x = np.log(r[m])
    y = np.log(d[m])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return RankSizeFit(float(-slope), float(intercept), r2, n, int(m.sum()), min_rank)


def validate_boundaries(boundaries) -> tuple[int, ...]:
    b = tuple(int(x) for x in boundaries)
    if len(b) != 4 or any(x <= 0 for x in b) or any(b[i] >= b[i + 1] for i in range(3)):
        raise ValueError("area boundaries must be 4 strictly increasing positive ranks")
    return b


def classify_areas(gd: GridDensity, boundaries=DEFAULT_AREA_BOUNDARIES) -> np.ndarray:
    """Density class 1..5 per grid row: class 1 holds ranks up to the
    first boundary, class 5 everything past the last. Tied densities share
    a rank and therefore a class."""
    b = validate_boundaries(boundaries)
    ranks = rank_desc(gd.density)
    labels = np.full(len(gd), len(b) + 1, dtype=np.int64)
    for bound in b:
        labels -= (ranks <= bound).astype(np.int64)
    return labels


def ego_areas(
    homes: dict[str, tuple[float, float] | None],
    gd: GridDensity,
    labels: np.ndarray,
) -> dict[str, int]:
    """Density class of each homed individual, via their home cell."""
    row_of = gd.row_of_cell()
    out: dict[str, int] = {}
    for ego in sorted(homes):
        h = homes[ego]
        if h is None:
            continue
        cell = gd.grid.cell_of(h[0], h[1])
        row = row_of.get(cell)
        if row is not None:
            out[ego] = int(labels[row])
    return out


def area_summary(
    gd: GridDensity,
    labels: np.ndarray,
    homes: dict[str, tuple[float, float] | None],
    fine_grid: GridSpec,
) -> dict[int, dict[str, float]]:
    """Per class: cell count, resident count, and the mean fine-grid
    density experienced by residents (each individual weighted once)."""
    fine = build_density(homes, fine_grid)
    fine_rows = fine.row_of_cell()
    by_ego_area = ego_areas(homes, gd, labels)
    sums: dict[int, list[float]] = {a: [0, 0.0] for a in range(1, 6)}
    for ego, area in by_ego_area.items():
        h = homes[ego]
        row = fine_rows.get(fine_grid.cell_of(h[0], h[1]))
        if row is None:
            continue
        sums[area][0] += 1
        sums[area][1] += float(fine.density[row])
    out: dict[int, dict[str, float]] = {}
    for a in range(1, 6):
        n_cells = int((labels == a).sum())
        n, dsum = sums[a]
        out[a] = {
            "cells": n_cells,
            "residents": int(n),
            "mean_density_km2": (dsum / n) if n else float("nan"),
        }
    return out


def write_grid_csv(gd: GridDensity, labels: np.ndarray | None, path) -> int:
    """cell_i,cell_j,center_lat,center_lon,area_km2,population,
    density_km2,mean_activity,mean_mobility_km,mean_rg_km,area_class"""
    n = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(
            "cell_i,cell_j,center_lat,center_lon,area_km2,population,"
            "density_km2,mean_activity,mean_mobility_km,mean_rg_km,area_class\n"
        )
        for k in range(len(gd)):
            lat, lon = gd.grid.cell_center(int(gd.cell_i[k]), int(gd.cell_j[k]))
            ma = "" if gd.mean_activity is None else repr(float(gd.mean_activity[k]))
            mm = "" if gd.mean_mobility is None else repr(float(gd.mean_mobility[k]))
            mr = ""
            if gd.mean_rg is not None and not np.isnan(gd.mean_rg[k]):
                mr = repr(float(gd.mean_rg[k]))
            lab = "" if labels is None else str(int(labels[k]))
            fh.write(
                f"{int(gd.cell_i[k])},{int(gd.cell_j[k])},{lat!r},{lon!r},"
                f"{gd.grid.cell_area_km2(int(gd.cell_i[k]))!r},{int(gd.population[k])},"
                f"{float(gd.density[k])!r},{ma},{mm},{mr},{lab}\n"
            )
            n += 1
    return n
