"""Daily rhythm profiles, night-window detection, and home locations.

The home of an individual is the plain mean of the positions of their
events inside the nightly inactivity window. The window itself is found
from the population's daily activity profile: fit a two-peak day/evening
model to confirm the rhythm is bimodal, then take the quietest fixed-width
stretch of the circular day.

Homes are averages of tower coordinates, so one can land on water; such
homes are flagged (nearest tower beyond a cutoff), never silently dropped.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import curve_fit

from .geo import NearestTowerIndex
from .ingest import Timeline
from .metrics import EgoMetrics
from .records import TowerRegistry

PROFILE_METRICS = ("activity", "mobility", "rg")


class UnimodalProfileError(Exception):
    """The daily profile does not show two separated peaks."""


@dataclass
class DailyProfile:
    """Population daily rhythm: one value per time-of-day bin.

    activity is the mean event count per individual per bin; mobility is
    the root mean square displacement over all pooled displacement pairs
    in the bin; rg the root mean square home distance of pooled events.
    """

    metric: str
    bin_minutes: int
    values: np.ndarray
    n_individuals: int

    @property
    def nbins(self) -> int:
        return len(self.values)

    def bin_centers_hours(self) -> np.ndarray:
        w = self.bin_minutes / 60.0
        return (np.arange(self.nbins) + 0.5) * w


def daily_profile(
    timelines: dict[str, Timeline],
    registry: TowerRegistry,
    metric: str = "activity",
    bin_minutes: int = 60,
    homes: dict[str, tuple[float, float] | None] | None = None,
) -> DailyProfile:
    """Pool every individual's events into time-of-day bins."""
    if metric not in PROFILE_METRICS:
        raise ValueError(f"unknown profile metric {metric!r}")
    if 1440 % bin_minutes:
        raise ValueError("bin width must divide the day evenly")
    if metric == "rg" and homes is None:
        raise ValueError("rg profile needs home locations")
    nbins = 1440 // bin_minutes
    acc_a = np.zeros(nbins)
    acc_d2 = np.zeros(nbins)
    acc_pairs = np.zeros(nbins)
    acc_h2 = np.zeros(nbins)
    for ego in sorted(timelines):
        home = homes.get(ego) if homes else None
        if metric == "rg" and home is None:
            continue
        em = EgoMetrics(timelines[ego], registry, home if metric == "rg" else None)
        a, d2sum, h2sum, pairs = em.time_of_day_bins(nbins)
        acc_a += a
        acc_d2 += d2sum
        acc_pairs += pairs
        if h2sum is not None:
            acc_h2 += h2sum
    n = len(timelines)
    if metric == "activity":
        values = acc_a / max(n, 1)
    elif metric == "mobility":
        with np.errstate(invalid="ignore", divide="ignore"):
            values = np.where(acc_pairs > 0, np.sqrt(acc_d2 / np.maximum(acc_pairs, 1)), 0.0)
    else:
        with np.errstate(invalid="ignore", divide="ignore"):
            values = np.where(acc_a > 0, np.sqrt(acc_h2 / np.maximum(acc_a, 1)), 0.0)
    return DailyProfile(metric, bin_minutes, values, n)


@dataclass
class BimodalFit:
    """Two-Gaussian-plus-floor description of a daily profile, components
    ordered by hour (day peak first). Hours are clock hours in [0, 24)."""

    mu_day_h: float
    sigma_day_h: float
    amp_day: float
    mu_evening_h: float
    sigma_evening_h: float
    amp_evening: float
    floor: float
    rmse: float


def _two_gauss(t, a1, mu1, s1, a2, mu2, s2, base):
    return (
        base
        + a1 * np.exp(-0.5 * ((t - mu1) / s1) ** 2)
        + a2 * np.exp(-0.5 * ((t - mu2) / s2) ** 2)
    )


def fit_bimodal(profile: DailyProfile) -> BimodalFit:
    """Fit floor + two Gaussians to the profile at bin centers.

    Raises UnimodalProfileError when the optimizer cannot place two
    separated, non-vanishing components (peaks closer than 2 h, or the
    smaller amplitude under 5% of the larger).
    """
    t = profile.bin_centers_hours()
    y = np.asarray(profile.values, dtype=float)
    span = float(y.max() - y.min())
    if span <= 0:
        raise UnimodalProfileError("profile is flat")
    base0 = float(y.min())

    def peak_in(lo, hi):
        m = (t >= lo) & (t < hi)
        if not m.any():
            return (lo + hi) / 2.0, span * 0.5
        k = np.flatnonzero(m)[np.argmax(y[m])]
        return float(t[k]), float(y[k] - base0)

    starts = []
    for day_span, eve_span in (((8, 16), (16, 23)), ((6, 14), (14, 22)), ((9, 15), (17, 23))):
        (m1, a1), (m2, a2) = peak_in(*day_span), peak_in(*eve_span)
        starts.append([max(a1, span * 0.1), m1, 2.5, max(a2, span * 0.1), m2, 2.5, base0])

    lower = [0.0, 0.0, 0.3, 0.0, 0.0, 0.3, 0.0]
    upper = [np.inf, 24.0, 8.0, np.inf, 24.0, 8.0, np.inf]
    best = None
    for p0 in starts:
        try:
            popt, _ = curve_fit(_two_gauss, t, y, p0=p0, bounds=(lower, upper), maxfev=20000)
        except (RuntimeError, ValueError):
            continue
        sse = float(np.sum((_two_gauss(t, *popt) - y) ** 2))
        if best is None or sse < best[0]:
            best = (sse, popt)
    if best is None:
        raise UnimodalProfileError("two-peak fit did not converge")
    sse, p = best
    a1, mu1, s1, a2, mu2, s2, base = (float(v) for v in p)
    if mu2 < mu1:
        a1, mu1, s1, a2, mu2, s2 = a2, mu2, s2, a1, mu1, s1
    if abs(mu2 - mu1) < 2.0 or min(a1, a2) < 0.05 * max(a1, a2):
        raise UnimodalProfileError(
            f"components degenerate: peaks at {mu1:.2f}h/{mu2:.2f}h, amps {a1:.3g}/{a2:.3g}"
        )
    rmse = math.sqrt(sse / len(t))
    return BimodalFit(mu1, s1, a1, mu2, s2, a2, base, rmse)


def find_inactive_window(profile: DailyProfile, window_hours: float = 6.0) -> tuple[float, float]:
    """Start/end clock hours of the quietest window of the given width.

    The window slides circularly in whole bins; ties resolve to the
    earliest clock start. End may exceed 24 only conceptually; it is
    reported modulo 24 (e.g. (23.0, 5.0)).
    """
    wbins = round(window_hours * 60 / profile.bin_minutes)
    if wbins < 1 or wbins > profile.nbins:
        raise ValueError("window width out of range")
    y = np.asarray(profile.values, dtype=float)
    wrapped = np.concatenate((y, y[: wbins - 1]))
    sums = np.convolve(wrapped, np.ones(wbins), mode="valid")
    start_bin = int(np.argmin(sums))  # first minimum = earliest clock start
    w = profile.bin_minutes / 60.0
    start = start_bin * w
    end = (start + window_hours) % 24.0
    return start, (24.0 if end == 0 else end)


def night_mask(ts: np.ndarray, window: tuple[float, float]) -> np.ndarray:
    """Boolean mask of events whose time of day falls in [start, end).
    Windows crossing midnight wrap."""
    start, end = window
    hours = (ts % 86400) / 3600.0
    if start <= end:
        return (hours >= start) & (hours < end)
    return (hours >= start) | (hours < end)


def compute_homes(
    timelines: dict[str, Timeline],
    registry: TowerRegistry,
    window: tuple[float, float],
) -> dict[str, tuple[float, float] | None]:
    """Mean event position inside the night window, per individual; None
    when an individual has no night events at all."""
    homes: dict[str, tuple[float, float] | None] = {}
    for ego in sorted(timelines):
        tl = timelines[ego]
        m = night_mask(tl.ts, window)
        if not m.any():
            homes[ego] = None
            continue
        lat, lon = tl.positions(registry)
        homes[ego] = (float(lat[m].mean()), float(lon[m].mean()))
    return homes


def flag_at_sea(
    homes: dict[str, tuple[float, float] | None],
    registry: TowerRegistry,
    cutoff_km: float = 10.0,
) -> dict[str, bool]:
    """True for homes farther than cutoff_km from every tower. With no
    coastline data this distance is the practical offshore signal."""
    index = NearestTowerIndex(registry.lat, registry.lon)
    egos = [e for e, h in homes.items() if h is not None]
    if not egos:
        return {}
    lats = np.array([homes[e][0] for e in egos])
    lons = np.array([homes[e][1] for e in egos])
    d = index.distance_km(lats, lons)
    return {e: bool(d[k] > cutoff_km) for k, e in enumerate(egos)}


def write_homes_csv(
    homes: dict[str, tuple[float, float] | None],
    night_counts: dict[str, int],
    at_sea: dict[str, bool],
    path,
) -> int:
    """ego_id,home_lat,home_lon,night_events,at_sea; blank coordinates for
    individuals without a home. Returns the row count."""
    n = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("ego_id,home_lat,home_lon,night_events,at_sea\n")
        for ego in sorted(homes):
            h = homes[ego]
            if h is None:
                fh.write(f"{ego},,,0,\n")
            else:
                fh.write(
                    f"{ego},{h[0]!r},{h[1]!r},{night_counts.get(ego, 0)},"
                    f"{1 if at_sea.get(ego) else 0}\n"
                )
            n += 1
    return n


def read_homes_csv(path) -> dict[str, tuple[float, float] | None]:
    homes: dict[str, tuple[float, float] | None] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for row in reader:
            if not row:
                continue
            homes[row[0]] = (float(row[1]), float(row[2])) if row[1] else None
    return homes


def night_event_counts(
    timelines: dict[str, Timeline], window: tuple[float, float]
) -> dict[str, int]:
    return {ego: int(night_mask(tl.ts, window).sum()) for ego, tl in timelines.items()}
