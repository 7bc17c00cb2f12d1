"""Density grids, rank statistics, and the five-class split."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdrmob.density import (
    BandCorrelation,
    DensityError,
    GridDensity,
    build_density,
    build_density_from_counts,
    classify_areas,
    ego_areas,
    rank_desc,
    rank_size,
    sliding_correlation,
    spearman,
    validate_boundaries,
)
from cdrmob.geo import GridSpec
from cdrmob.metrics import MetricRow

GRID = GridSpec(0.05, 0.05, lat0=40.0, lon0=20.0)


def _gd_from_density(values):
    values = np.asarray(values, dtype=float)
    n = len(values)
    return GridDensity(
        GRID,
        np.arange(n),
        np.zeros(n, dtype=int),
        np.maximum(values, 1).astype(int),
        values,
    )


def test_build_density_counts_residents_per_cell():
    homes = {
        "a": (40.01, 20.01),
        "b": (40.02, 20.02),  # same cell as a
        "c": (40.07, 20.01),  # next latitude band
        "d": None,            # skipped
    }
    gd = build_density(homes, GRID)
    assert len(gd) == 2
    assert gd.population.tolist() == [2, 1]
    assert gd.cell_i.tolist() == [0, 1] and gd.cell_j.tolist() == [0, 0]
    a0 = GRID.cell_area_km2(0)
    assert gd.density[0] == pytest.approx(2 / a0)
    assert gd.row_of_cell() == {(0, 0): 0, (1, 0): 1}


def test_build_density_cell_means():
    homes = {"a": (40.01, 20.01), "b": (40.02, 20.02), "c": (40.07, 20.01)}
    rows = {
        "a": MetricRow("a", "2008", 10, 1.0, 2.0, 9),
        "b": MetricRow("b", "2008", 30, 3.0, None, 29),
        "c": MetricRow("c", "2008", 7, 0.5, 4.0, 6),
    }
    gd = build_density(homes, GRID, rows)
    assert gd.mean_activity.tolist() == [20.0, 7.0]
    assert gd.mean_mobility.tolist() == [2.0, 0.5]
    # rg means skip individuals without one
    assert gd.mean_rg[0] == pytest.approx(2.0)
    assert gd.mean_rg[1] == pytest.approx(4.0)
    with pytest.raises(DensityError):
        build_density({"x": None}, GRID)


def test_build_density_from_counts_matches_build_density():
    counts = {(0, 0): 2, (1, 0): 1}
    gd = build_density_from_counts(counts, GRID)
    homes = {"a": (40.01, 20.01), "b": (40.02, 20.02), "c": (40.07, 20.01)}
    ref = build_density(homes, GRID)
    assert np.array_equal(gd.population, ref.population)
    assert np.allclose(gd.density, ref.density)
    with pytest.raises(DensityError):
        build_density_from_counts({(0, 0): 0}, GRID)


def test_rank_desc_average_ties():
    assert rank_desc([5.0, 1.0, 5.0, 0.5]).tolist() == [1.5, 3.0, 1.5, 4.0]


def test_spearman_known_values():
    x = [1.0, 2.0, 3.0, 4.0, 5.0]
    assert spearman(x, [2.0, 4.0, 6.0, 8.0, 10.0]) == 1.0
    assert spearman(x, [5.0, 4.0, 3.0, 2.0, 1.0]) == -1.0
    # classic hand example: one swapped pair
    assert spearman(x, [1.0, 2.0, 3.0, 5.0, 4.0]) == pytest.approx(0.9)
    with pytest.raises(ValueError):
        spearman(x, [1.0, 2.0])
    with pytest.raises(DensityError):
        spearman([1.0, 2.0], [3.0, 4.0])
    with pytest.raises(DensityError):
        spearman([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])


@settings(max_examples=100)
@given(
    st.lists(st.integers(-1_000_000, 1_000_000), min_size=3, max_size=60, unique=True),
    st.sampled_from([(2.0, 1.0), (0.5, -3.0), (10.0, 0.0)]),
)
def test_spearman_invariant_under_increasing_transforms(xs, ab):
    # integer support keeps the affine map exact, so ranks cannot shift
    a, b = ab
    x = np.asarray(xs, dtype=float)
    y = np.sin(x)  # arbitrary comparison values
    if np.all(y == y[0]):
        return
    before = spearman(x, y)
    after = spearman(a * x + b, y)  # strictly increasing transform of x
    assert after == pytest.approx(before, abs=1e-12)
    assert spearman(-x, y) == pytest.approx(-before, abs=1e-12)


def test_sliding_correlation_band_edges_and_gaps():
    rng = np.random.default_rng(3)
    density = rng.uniform(1.0, 100.0, size=300)
    values = rng.normal(size=300)
    bands = sliding_correlation(density, values)
    for k, band in enumerate(bands):
        assert band.band == k
        assert band.rank_lo == pytest.approx(2 ** (k / 2))
        assert band.rank_hi == pytest.approx(2 ** (k / 2 + 1))
        assert band.center_rank == pytest.approx(math.sqrt(band.rank_lo * band.rank_hi))
    assert bands[-1].rank_lo <= 300
    # the first band holds ranks [1, 2): a single cell, too few to correlate
    assert bands[0].n_cells == 1 and bands[0].corr is None
    assert bands[0].note == "too_few_cells"
    wide = [b for b in bands if b.n_cells >= 3]
    assert all(b.corr is not None and -1.0 <= b.corr <= 1.0 for b in wide)


def test_sliding_correlation_flags_degenerate_ranks():
    density = np.ones(40)  # every cell ties: rank variance is zero
    values = np.arange(40.0)
    bands = sliding_correlation(density, values)
    tied = [b for b in bands if b.n_cells >= 3]
    assert tied and all(b.corr is None and b.note == "degenerate" for b in tied)


def test_rank_size_exact_on_pure_power_law():
    ranks = np.arange(1, 1001, dtype=float)
    for exponent in (0.7, 1.0, 1.3):
        density = 5e5 * ranks ** (-exponent)
        fit = rank_size(density, min_rank=100)
        assert fit.exponent == pytest.approx(exponent, rel=1e-9)
        assert fit.r2 == pytest.approx(1.0, abs=1e-12)
        assert fit.n_tail == 900 and fit.n_cells == 1000
    with pytest.raises(DensityError):
        rank_size(np.ones(50))
    with pytest.raises(DensityError):
        rank_size(np.ones(300), min_rank=298)


def test_classify_areas_boundaries_and_ties():
    # 40 cells with distinct densities: ranks 1..40
    gd = _gd_from_density(np.arange(40, 0, -1, dtype=float))
    labels = classify_areas(gd, (2, 5, 10, 20))
    assert labels[:2].tolist() == [1, 1]
    assert labels[2:5].tolist() == [2, 2, 2]
    assert labels[5:10].tolist() == [3] * 5
    assert labels[10:20].tolist() == [4] * 10
    assert labels[20:].tolist() == [5] * 20


def test_classify_areas_tied_cells_share_a_class():
    # two cells tied at the top share rank 1.5 and stay in class 1
    gd = _gd_from_density([9.0, 9.0, 5.0, 1.0])
    labels = classify_areas(gd, (2, 3, 4, 5))  # boundaries beyond n: tail classes empty
    assert labels.tolist() == [1, 1, 2, 3]


def test_validate_boundaries():
    assert validate_boundaries((30, 100, 1000, 10000)) == (30, 100, 1000, 10000)
    for bad in ((0, 1, 2, 3), (1, 2, 3), (5, 4, 10, 20), (1, 1, 2, 3)):
        with pytest.raises(ValueError):
            validate_boundaries(bad)


def test_ego_areas_follow_home_cells():
    homes = {"a": (40.01, 20.01), "b": (40.02, 20.02), "c": (40.07, 20.01), "d": None}
    gd = build_density(homes, GRID)
    labels = classify_areas(gd, (1, 2, 3, 4))
    areas = ego_areas(homes, gd, labels)
    assert set(areas) == {"a", "b", "c"}
    assert areas["a"] == areas["b"]  # same cell, same class
    # the two-resident cell is denser, so it ranks first
    assert areas["a"] == 1 and areas["c"] == 2
