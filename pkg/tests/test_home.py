"""Daily rhythm fitting, inactivity window, and home detection."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cdrmob.home import (
    DailyProfile,
    UnimodalProfileError,
    compute_homes,
    daily_profile,
    find_inactive_window,
    fit_bimodal,
    flag_at_sea,
    night_event_counts,
    night_mask,
    read_homes_csv,
    write_homes_csv,
)
from cdrmob.ingest import Timeline
from cdrmob.records import TowerRegistry, parse_timestamp

REG = TowerRegistry({"T1": (40.0, 20.0), "T2": (40.4, 20.0), "T3": (40.0, 20.3)})


def _tl(stamps, towers, ego="e"):
    ts = np.asarray([parse_timestamp(s) for s in stamps], dtype=np.int64)
    order = np.argsort(ts, kind="stable")
    n = len(ts)
    return Timeline(
        ego,
        ts[order],
        np.asarray(towers, dtype=np.int32)[order],
        np.zeros(n, dtype=np.int8),
        np.ones(n, dtype=np.int8),
    )


def test_daily_profile_activity_means():
    tls = {
        "a": _tl(["2008-01-01T03:10:00", "2008-01-01T03:40:00"], [0, 0], "a"),
        "b": _tl(["2008-02-05T03:20:00", "2008-02-05T05:30:00"], [1, 2], "b"),
    }
    prof = daily_profile(tls, REG, "activity", bin_minutes=60)
    assert prof.nbins == 24 and prof.n_individuals == 2
    assert prof.values[3] == pytest.approx(1.5)  # 3 events over 2 individuals
    assert prof.values[5] == pytest.approx(0.5)
    assert prof.values[7] == 0.0
    assert prof.bin_centers_hours()[0] == pytest.approx(0.5)


def test_daily_profile_validation():
    with pytest.raises(ValueError):
        daily_profile({}, REG, "sleepiness")
    with pytest.raises(ValueError):
        daily_profile({}, REG, "activity", bin_minutes=7)
    with pytest.raises(ValueError):
        daily_profile({}, REG, "rg")  # needs homes


def _mixture(t, mu1, s1, a1, mu2, s2, a2, floor):
    return (
        floor
        + a1 * np.exp(-0.5 * ((t - mu1) / s1) ** 2)
        + a2 * np.exp(-0.5 * ((t - mu2) / s2) ** 2)
    )


def test_fit_recovers_constructed_two_peak_profile():
    t = (np.arange(48) + 0.5) * 0.5
    y = _mixture(t, 12.97, 2.36, 1.0, 19.72, 2.31, 0.85, 0.05)
    fit = fit_bimodal(DailyProfile("activity", 30, y, 1000))
    assert fit.mu_day_h == pytest.approx(12.97, abs=1e-3)
    assert fit.mu_evening_h == pytest.approx(19.72, abs=1e-3)
    assert fit.sigma_day_h == pytest.approx(2.36, abs=1e-3)
    assert fit.sigma_evening_h == pytest.approx(2.31, abs=1e-3)
    assert fit.amp_day == pytest.approx(1.0, abs=1e-3)
    assert fit.amp_evening == pytest.approx(0.85, abs=1e-3)
    assert fit.rmse < 1e-6
    # components come back ordered by hour even when the evening peak wins
    y2 = _mixture(t, 11.0, 2.0, 0.6, 20.0, 2.0, 1.0, 0.02)
    fit2 = fit_bimodal(DailyProfile("activity", 30, y2, 1000))
    assert fit2.mu_day_h < fit2.mu_evening_h


def test_fit_rejects_degenerate_profiles():
    t = (np.arange(48) + 0.5) * 0.5
    with pytest.raises(UnimodalProfileError):
        fit_bimodal(DailyProfile("activity", 30, np.ones(48), 10))
    one_peak = 0.05 + np.exp(-0.5 * ((t - 14.0) / 2.5) ** 2)
    with pytest.raises(UnimodalProfileError):
        fit_bimodal(DailyProfile("activity", 30, one_peak, 10))


def test_find_inactive_window_plain_and_wrapped():
    y = np.ones(48)
    y[2:14] = 0.1  # quiet 01:00-07:00
    assert find_inactive_window(DailyProfile("activity", 30, y, 10)) == (1.0, 7.0)
    z = np.ones(48)
    z[46:] = 0.1  # quiet 23:00-05:00, wrapping midnight
    z[:10] = 0.1
    assert find_inactive_window(DailyProfile("activity", 30, z, 10)) == (23.0, 5.0)
    # ties resolve to the earliest clock start
    assert find_inactive_window(DailyProfile("activity", 30, np.ones(48), 10)) == (0.0, 6.0)
    with pytest.raises(ValueError):
        find_inactive_window(DailyProfile("activity", 30, y, 10), window_hours=0.0)
    with pytest.raises(ValueError):
        find_inactive_window(DailyProfile("activity", 30, y, 10), window_hours=25.0)


def test_night_mask_boundaries():
    ts = np.array(
        [parse_timestamp(s) for s in (
            "2008-03-01T01:00:00",  # exactly at start: in
            "2008-03-01T06:59:59",
            "2008-03-01T07:00:00",  # exactly at end: out
            "2008-03-01T12:00:00",
        )],
        dtype=np.int64,
    )
    assert night_mask(ts, (1.0, 7.0)).tolist() == [True, True, False, False]
    wrapped = night_mask(ts, (23.0, 7.0))
    assert wrapped.tolist() == [True, True, False, False]
    late = np.array([parse_timestamp("2008-03-01T23:30:00")], dtype=np.int64)
    assert night_mask(late, (23.0, 7.0)).tolist() == [True]


@given(
    st.floats(0.0, 23.9999),
    st.floats(0.0, 23.9999),
    st.lists(st.integers(0, 86399), min_size=1, max_size=50),
)
def test_night_mask_complement_partitions_the_day(a, b, tods):
    if a == b:
        return
    ts = np.asarray(tods, dtype=np.int64)
    m1 = night_mask(ts, (a, b))
    m2 = night_mask(ts, (b, a))
    assert np.all(m1 ^ m2)  # every event is in exactly one of the two arcs


def test_compute_homes_and_counts():
    tls = {
        # two night events at T1, day events elsewhere
        "a": _tl(
            ["2008-01-01T02:00:00", "2008-01-02T03:30:00", "2008-01-02T14:00:00"],
            [0, 0, 1],
            "a",
        ),
        # night events at two different towers: home is their mean
        "b": _tl(["2008-01-01T02:00:00", "2008-01-01T03:00:00"], [0, 1], "b"),
        # day-only individual: no home
        "c": _tl(["2008-01-01T12:00:00"], [2], "c"),
    }
    homes = compute_homes(tls, REG, (1.0, 7.0))
    assert homes["a"] == (40.0, 20.0)
    assert homes["b"] == (pytest.approx(40.2), pytest.approx(20.0))
    assert homes["c"] is None
    counts = night_event_counts(tls, (1.0, 7.0))
    assert counts == {"a": 2, "b": 2, "c": 0}


def test_flag_at_sea_uses_nearest_tower():
    # towers T1/T2 are ~44 km apart; their midpoint is ~22 km from each
    homes = {"mid": (40.2, 20.0), "anchored": (40.0, 20.0), "void": None}
    flags = flag_at_sea(homes, REG, cutoff_km=10.0)
    assert flags == {"mid": True, "anchored": False}
    assert flag_at_sea(homes, REG, cutoff_km=30.0)["mid"] is False
    assert flag_at_sea({"void": None}, REG) == {}


def test_homes_csv_round_trip(tmp_path):
    homes = {"a": (40.123456789, 20.987654321), "b": None}
    p = tmp_path / "homes.csv"
    write_homes_csv(homes, {"a": 7}, {"a": False}, p)
    assert read_homes_csv(p) == homes
