"""Cohort-level behaviour patterns along time axes and demographic strata.

A pattern series fixes an axis (year, month, dow, hour), a per-window
value (activity, mobility, rg), and a statistic (mean, median,
normalized_median), then pools one sample per (individual, matching
window) over a cohort:

  * month/year windows exist for every individual, so quiet windows enter
    as zero activity / zero mobility samples;
  * dow pools every calendar day of the year by weekday, again keeping
    quiet days as zeros;
  * hour pools the 24 time-of-day bins, each individual contributing one
    pooled value per bin;
  * rg samples exist only for windows that contain events of an
    individual with a known home; empty windows are excluded rather than
    counted as zero.

normalized_median rescales the per-bin medians so their mean over
populated bins is 1, which makes shapes comparable across cohorts of very
different overall levels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ingest import Timeline
from .metrics import HOUR_IDS, WEEKDAY_IDS, EgoMetrics, WindowSpec
from .records import AGE_GROUP_LABELS, Demographics, TowerRegistry, age_group_of, year_bounds

AXES = ("year", "month", "dow", "hour")
VALUES = ("activity", "mobility", "rg")
STATISTICS = ("mean", "median", "normalized_median")

_EPOCH_WEEKDAY = 3  # 1970-01-01 was a Thursday


class PatternError(Exception):
    pass


class EmptyCohortError(PatternError):
    """No individual in the cohort can contribute a sample."""


@dataclass
class PatternSeries:
    axis: str
    value: str
    statistic: str
    bins: tuple[str, ...]
    stat: np.ndarray  # NaN where a bin has no samples
    n: np.ndarray
    se: np.ndarray | None  # standard error, mean statistic only


def build_engines(
    timelines: dict[str, Timeline],
    registry: TowerRegistry,
    homes: dict[str, tuple[float, float] | None] | None = None,
    divisor: str = "events",
) -> dict[str, EgoMetrics]:
    """One reusable prefix-sum engine per individual."""
    h = homes or {}
    return {e: EgoMetrics(timelines[e], registry, h.get(e), divisor) for e in sorted(timelines)}


def _pooled_values(em: EgoMetrics, nbins: int, value: str):
    a, d2, h2, pairs = em.time_of_day_bins(nbins)
    if value == "activity":
        return a.astype(float), np.ones(nbins, dtype=bool)
    if value == "mobility":
        div = a if em.divisor == "events" else pairs
        with np.errstate(invalid="ignore", divide="ignore"):
            m = np.where(div > 0, np.sqrt(np.maximum(d2, 0.0) / np.maximum(div, 1)), 0.0)
        return m, np.ones(nbins, dtype=bool)
    with np.errstate(invalid="ignore", divide="ignore"):
        rg = np.where(a > 0, np.sqrt(np.maximum(h2, 0.0) / np.maximum(a, 1)), np.nan)
    return rg, a > 0


def _window_values(em: EgoMetrics, bounds: np.ndarray, value: str):
    a, m, rg, pairs = em.windows(bounds)
    k = len(bounds) - 1
    if value == "activity":
        return a.astype(float), np.ones(k, dtype=bool)
    if value == "mobility":
        return m, np.ones(k, dtype=bool)
    return rg, a > 0


def pattern(
    ems: dict[str, EgoMetrics],
    cohort,
    axis: str,
    value: str,
    statistic: str = "mean",
    analysis_year: int = 2008,
) -> PatternSeries:
    """Pattern series for a cohort (iterable of ego ids; None = everyone)."""
    if axis not in AXES:
        raise ValueError(f"unknown axis {axis!r}")
    if value not in VALUES:
        raise ValueError(f"unknown value {value!r}")
    if statistic not in STATISTICS:
        raise ValueError(f"unknown statistic {statistic!r}")
    egos = sorted(ems.keys() if cohort is None else set(cohort) & ems.keys())
    if value == "rg":
        egos = [e for e in egos if ems[e].cumh2 is not None]
    if not egos:
        raise EmptyCohortError(f"no usable individuals for {value} pattern")

    if axis == "hour":
        ids: tuple[str, ...] = HOUR_IDS
        k = 24
        spans = None
    else:
        gran = "day" if axis == "dow" else axis
        spans = WindowSpec(gran).contiguous_windows(analysis_year)
        ids = WEEKDAY_IDS if axis == "dow" else tuple(w for w, _, _ in spans)
        k = len(spans)
        bounds = np.array([spans[0][1]] + [t1 for _, _, t1 in spans], dtype=np.int64)

    vals = np.empty((len(egos), k))
    valid = np.empty((len(egos), k), dtype=bool)
    for r, e in enumerate(egos):
        if axis == "hour":
            v, ok = _pooled_values(ems[e], 24, value)
        else:
            v, ok = _window_values(ems[e], bounds, value)
        vals[r] = v
        valid[r] = ok

    if axis == "dow":
        wd = np.array([((t0 // 86400) + _EPOCH_WEEKDAY) % 7 for _, t0, _ in spans])
        samples = [vals[:, wd == w][valid[:, wd == w]] for w in range(7)]
    else:
        samples = [vals[:, b][valid[:, b]] for b in range(k)]

    nbins = len(ids)
    stat = np.full(nbins, np.nan)
    n = np.zeros(nbins, dtype=np.int64)
    se = np.full(nbins, np.nan) if statistic == "mean" else None
    med = np.full(nbins, np.nan)
    for b in range(nbins):
        s = samples[b]
        n[b] = len(s)
        if not len(s):
            continue
        if statistic == "mean":
            stat[b] = float(s.mean())
            if len(s) > 1:
                se[b] = float(s.std(ddof=1) / math.sqrt(len(s)))
        else:
            med[b] = float(np.median(s))
            stat[b] = med[b]
    if statistic == "normalized_median":
        pop = n > 0
        if not pop.any():
            raise EmptyCohortError("no populated bins")
        norm = float(np.nanmean(med[pop]))
        if norm == 0:
            raise PatternError("cannot normalize: median level is zero")
        stat = med / norm
    if int(n.sum()) == 0:
        raise EmptyCohortError("cohort produced no samples")
    return PatternSeries(axis, value, statistic, ids, stat, n, se)


def write_pattern_csv(series: list[PatternSeries], path) -> int:
    """cohort,axis,value,statistic,bin,stat,n,se (stat/se blank where undefined).
    Cohort is a caller-attached label; series built directly default to "all"."""
    rows = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("cohort,axis,value,statistic,bin,stat,n,se\n")
        for s in series:
            cohort = getattr(s, "cohort", "all")
            for b, wid in enumerate(s.bins):
                v = "" if np.isnan(s.stat[b]) else repr(float(s.stat[b]))
                e = ""
                if s.se is not None and not np.isnan(s.se[b]):
                    e = repr(float(s.se[b]))
                fh.write(
                    f"{cohort},{s.axis},{s.value},{s.statistic},{wid},{v},{int(s.n[b])},{e}\n"
                )
                rows += 1
    return rows


@dataclass
class StratumRow:
    area: str  # "1".."5" or "all"
    gender: str  # "female" | "male" | "all"
    age_group: str  # label or "all"
    n: int
    mean_activity: float
    se_activity: float | None
    mean_mobility_km: float
    se_mobility_km: float | None
    n_rg: int
    mean_rg_km: float | None
    se_rg_km: float | None


def _mean_se(x: np.ndarray) -> tuple[float, float | None]:
    m = float(x.mean())
    return m, (float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else None)


def demographic_table(
    ems: dict[str, EgoMetrics],
    demographics: Demographics,
    areas: dict[str, int] | None,
    analysis_year: int = 2008,
) -> tuple[list[StratumRow], int]:
    """Whole-year means stratified by density class, gender, and age group.

    Returns the populated strata and the count of individuals skipped for
    lacking demographics. Empty strata are omitted.
    """
    ys, ye = year_bounds(analysis_year)
    egos = [e for e in sorted(ems) if e in demographics.entries]
    skipped = len(ems) - len(egos)
    if not egos:
        raise EmptyCohortError("no individuals with demographics")
    act = np.empty(len(egos))
    mob = np.empty(len(egos))
    rg = np.full(len(egos), np.nan)
    for i, e in enumerate(egos):
        row = ems[e].window(ys, ye)
        act[i] = row.activity
        mob[i] = row.mobility_km
        if row.rg_km is not None:
            rg[i] = row.rg_km
    gender = np.array([demographics.gender(e) for e in egos])
    group = np.array([age_group_of(demographics.age(e)) for e in egos])
    area = np.array(["" if areas is None else str(areas.get(e, "")) for e in egos])

    out: list[StratumRow] = []
    area_keys = ["all"] + [str(a) for a in range(1, 6)]
    for ak in area_keys:
        am = np.ones(len(egos), dtype=bool) if ak == "all" else area == ak
        for gk in ("all", "female", "male"):
            gm = am if gk == "all" else am & (gender == gk)
            for grk in ("all",) + AGE_GROUP_LABELS:
                m = gm if grk == "all" else gm & (group == grk)
                nsel = int(m.sum())
                if nsel == 0:
                    continue
                ma, sa = _mean_se(act[m])
                mm, sm = _mean_se(mob[m])
                rsel = rg[m]
                rsel = rsel[~np.isnan(rsel)]
                if len(rsel):
                    mr, sr = _mean_se(rsel)
                else:
                    mr = sr = None
                out.append(
                    StratumRow(ak, gk, grk, nsel, ma, sa, mm, sm, len(rsel), mr, sr)
                )
    return out, skipped


def write_strata_csv(rows: list[StratumRow], path) -> int:
    def fmt(x):
        return "" if x is None else repr(float(x))

    n = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(
            "area,gender,age_group,n,mean_activity,se_activity,"
            "mean_mobility_km,se_mobility_km,n_rg,mean_rg_km,se_rg_km\n"
        )
        for r in rows:
            fh.write(
                f"{r.area},{r.gender},{r.age_group},{r.n},{r.mean_activity!r},"
                f"{fmt(r.se_activity)},{r.mean_mobility_km!r},{fmt(r.se_mobility_km)},"
                f"{r.n_rg},{fmt(r.mean_rg_km)},{fmt(r.se_rg_km)}\n"
            )
            n += 1
    return n
