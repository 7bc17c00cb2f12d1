"""End-to-end orchestration of the analysis stages.

A Pipeline lazily computes each stage the first time something needs it
(ingest -> daily profile -> rhythm fit -> night window -> homes -> per-ego
engines -> grid density -> correlations -> patterns -> strata), so every
CLI subcommand runs exactly the stages it needs and `report` runs them
all. Stage results are deterministic functions of the input files and the
config; thread count only affects wall time, never bytes.

Reference values quoted in reports (correlation magnitudes, per-class
densities) come from a large-scale reference dataset and are printed for
orientation only, never asserted.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .density import (
    DEFAULT_AREA_BOUNDARIES,
    DensityError,
    area_summary,
    build_density,
    classify_areas,
    ego_areas,
    rank_size,
    sliding_correlation,
    spearman,
    validate_boundaries,
    write_grid_csv,
)
from .geo import GridSpec
from .home import (
    compute_homes,
    daily_profile,
    find_inactive_window,
    fit_bimodal,
    flag_at_sea,
    night_event_counts,
    write_homes_csv,
)
from .ingest import ingest_file
from .metrics import EgoMetrics, WindowSpec, metrics_rows, write_metrics_csv
from .patterns import (
    EmptyCohortError,
    demographic_table,
    pattern,
    write_pattern_csv,
    write_strata_csv,
)
from .records import load_demographics, load_towers, year_bounds

log = logging.getLogger(__name__)

REFERENCE_CORR_ACTIVITY = 0.38
REFERENCE_CORR_MOBILITY = -0.11
REFERENCE_AREA_DENSITY_KM2 = (1252.9, 418.7, 83.2, 10.0, 1.5)


class PipelineError(Exception):
    """A stage cannot proceed on this input (maps to the data exit code)."""


@dataclass
class AnalysisConfig:
    """Everything that shapes an analysis run. Grid cells are anchored at
    (0, 0) so cell indices are absolute and comparable across runs."""

    analysis_year: int = 2008
    grid_step: float = 0.05
    fine_step: float = 0.01
    window: WindowSpec = field(default_factory=WindowSpec)
    night_window: tuple[float, float] | None = None  # override detection
    night_hours: float = 6.0
    bin_minutes: int = 30
    area_boundaries: tuple = DEFAULT_AREA_BOUNDARIES
    divisor: str = "events"
    reciprocity: str = "pair"
    at_sea_km: float = 10.0

    def __post_init__(self):
        validate_boundaries(self.area_boundaries)
        if self.grid_step <= 0 or self.fine_step <= 0:
            raise ValueError("grid steps must be positive")
        if 1440 % self.bin_minutes:
            raise ValueError("bin width must divide the day evenly")


def _hhmm(h: float) -> str:
    m = int(round(h * 60)) % 1440
    return f"{m // 60:02d}:{m % 60:02d}"


def window_label(window: tuple[float, float]) -> str:
    return f"{_hhmm(window[0])}-{_hhmm(window[1])}"


class Pipeline:
    def __init__(
        self,
        cdr_path,
        towers_path,
        demographics_path=None,
        config: AnalysisConfig | None = None,
        threads: int = 1,
    ):
        self.cdr_path = cdr_path
        self.towers_path = towers_path
        self.demographics_path = demographics_path
        self.config = config or AnalysisConfig()
        self.threads = max(1, int(threads))
        self.timings: dict[str, float] = {}
        self._cache: dict[str, object] = {}

    def _stage(self, name: str, fn):
        if name not in self._cache:
            t0 = time.perf_counter()
            self._cache[name] = fn()
            self.timings[name] = round(time.perf_counter() - t0, 3)
        return self._cache[name]

    # ------------------------------------------------------------- inputs
    @property
    def registry(self):
        return self._stage("towers", lambda: load_towers(self.towers_path))

    @property
    def demographics(self):
        if self.demographics_path is None:
            return None
        return self._stage(
            "demographics",
            lambda: load_demographics(self.demographics_path, self.config.analysis_year),
        )

    @property
    def ingest(self):
        def run():
            res = ingest_file(
                self.cdr_path,
                self.registry,
                analysis_year=self.config.analysis_year,
                reciprocity=self.config.reciprocity,
            )
            if not res.timelines:
                raise PipelineError("no surviving individuals after filtering")
            return res

        return self._stage("ingest", run)

    # ------------------------------------------------- rhythm and window
    @property
    def activity_profile(self):
        return self._stage(
            "profile",
            lambda: daily_profile(
                self.ingest.timelines, self.registry, "activity", self.config.bin_minutes
            ),
        )

    @property
    def mobility_profile(self):
        return self._stage(
            "profile_mobility",
            lambda: daily_profile(
                self.ingest.timelines, self.registry, "mobility", self.config.bin_minutes
            ),
        )

    @property
    def circadian_fit(self):
        return self._stage("fit", lambda: fit_bimodal(self.activity_profile))

    @property
    def night_window(self) -> tuple[float, float]:
        def run():
            if self.config.night_window is not None:
                return self.config.night_window
            # confirm the rhythm is two-peaked before trusting its minimum
            self.circadian_fit
            return find_inactive_window(self.activity_profile, self.config.night_hours)

        return self._stage("window", run)

    # --------------------------------------------------------------- homes
    @property
    def homes(self):
        return self._stage(
            "homes",
            lambda: compute_homes(self.ingest.timelines, self.registry, self.night_window),
        )

    @property
    def night_counts(self):
        return self._stage(
            "night_counts",
            lambda: night_event_counts(self.ingest.timelines, self.night_window),
        )

    @property
    def at_sea(self):
        return self._stage(
            "at_sea",
            lambda: flag_at_sea(self.homes, self.registry, self.config.at_sea_km),
        )

    # ------------------------------------------------------------- engines
    @property
    def engines(self) -> dict[str, EgoMetrics]:
        def run():
            tls = self.ingest.timelines
            egos = sorted(tls)
            homes = self.homes

            def make(chunk):
                return [
                    (e, EgoMetrics(tls[e], self.registry, homes.get(e), self.config.divisor))
                    for e in chunk
                ]

            if self.threads == 1 or len(egos) < 512:
                pairs = make(egos)
            else:
                chunks = [egos[i : i + 512] for i in range(0, len(egos), 512)]
                pairs = []
                with ThreadPoolExecutor(max_workers=self.threads) as pool:
                    for part in pool.map(make, chunks):
                        pairs.extend(part)
            return dict(pairs)

        return self._stage("engines", run)

    @property
    def year_rows(self):
        def run():
            ys, ye = year_bounds(self.config.analysis_year)
            out = {}
            for ego, em in self.engines.items():
                row = em.window(ys, ye)
                row.ego_id = ego
                row.window = str(self.config.analysis_year)
                out[ego] = row
            return out

        return self._stage("year_rows", run)

    def iter_metric_rows(self):
        for ego in sorted(self.engines):
            for row in metrics_rows(self.engines[ego], self.config.window, self.config.analysis_year):
                row.ego_id = ego
                yield row

    # ------------------------------------------------------------- density
    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.config.grid_step, self.config.grid_step)

    @property
    def grid_density(self):
        def run():
            try:
                return build_density(self.homes, self.grid, self.year_rows)
            except DensityError as e:
                raise PipelineError(str(e))

        return self._stage("density", run)

    @property
    def labels(self):
        return self._stage(
            "areas", lambda: classify_areas(self.grid_density, self.config.area_boundaries)
        )

    @property
    def ego_area(self):
        return self._stage("ego_area", lambda: ego_areas(self.homes, self.grid_density, self.labels))

    @property
    def correlations(self):
        def run():
            gd = self.grid_density
            out = {}
            for name, vals in (
                ("activity", gd.mean_activity),
                ("mobility", gd.mean_mobility),
                ("rg", gd.mean_rg),
            ):
                try:
                    ok = ~np.isnan(vals)
                    out[name] = {
                        "value": spearman(gd.density[ok], vals[ok]),
                        "n_cells": int(ok.sum()),
                    }
                except DensityError as e:
                    out[name] = {"value": None, "n_cells": len(gd), "note": str(e)}
            return out

        return self._stage("correlations", run)

    @property
    def bands(self):
        def run():
            gd = self.grid_density
            return {
                "activity": sliding_correlation(gd.density, gd.mean_activity),
                "mobility": sliding_correlation(gd.density, gd.mean_mobility),
            }

        return self._stage("bands", run)

    @property
    def ranksize(self):
        def run():
            try:
                return rank_size(self.grid_density.density)
            except DensityError as e:
                return str(e)  # reported, not fatal: small grids have no tail

        return self._stage("ranksize", run)

    @property
    def area_table(self):
        return self._stage(
            "area_table",
            lambda: area_summary(
                self.grid_density,
                self.labels,
                self.homes,
                GridSpec(self.config.fine_step, self.config.fine_step),
            ),
        )

    # ------------------------------------------------------------ patterns
    def area_cohort(self, area: int) -> list[str]:
        return [e for e, a in self.ego_area.items() if a == area]

    @property
    def patterns_bundle(self):
        def run():
            y = self.config.analysis_year
            ems = self.engines
            series = []

            def add(cohort_name, cohort, axis, value, statistic):
                try:
                    s = pattern(ems, cohort, axis, value, statistic, y)
                except EmptyCohortError:
                    return
                s.cohort = cohort_name
                series.append(s)

            add("all", None, "dow", "activity", "mean")
            add("all", None, "hour", "activity", "mean")
            add("all", None, "month", "activity", "mean")
            add("all", None, "month", "mobility", "mean")
            add("all", None, "month", "activity", "normalized_median")
            add("all", None, "month", "mobility", "normalized_median")
            for a in range(1, 6):
                cohort = self.area_cohort(a)
                if not cohort:
                    continue
                add(f"area{a}", cohort, "month", "activity", "mean")
                add(f"area{a}", cohort, "month", "activity", "normalized_median")
            return series

        return self._stage("patterns", run)

    @property
    def strata(self):
        def run():
            if self.demographics is None:
                return None
            rows, skipped = demographic_table(
                self.engines, self.demographics, self.ego_area, self.config.analysis_year
            )
            if skipped:
                log.info("strata: %d individuals lack demographics", skipped)
            return rows

        return self._stage("strata", run)


# ---------------------------------------------------------------- writers


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _series_key(s) -> str:
    return f"{getattr(s, 'cohort', 'all')}_{s.axis}_{s.value}_{s.statistic}"


def write_profile_csv(pipe: Pipeline, path) -> None:
    act = pipe.activity_profile
    mob = pipe.mobility_profile
    centers = act.bin_centers_hours()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("bin_center_h,activity_mean,mobility_rms_km\n")
        for k in range(act.nbins):
            fh.write(f"{float(centers[k])!r},{float(act.values[k])!r},{float(mob.values[k])!r}\n")


def write_window_json(pipe: Pipeline, path) -> None:
    fit = None
    if pipe.config.night_window is None:
        f = pipe.circadian_fit
        fit = {
            "mu_day_h": f.mu_day_h,
            "sigma_day_h": f.sigma_day_h,
            "amp_day": f.amp_day,
            "mu_evening_h": f.mu_evening_h,
            "sigma_evening_h": f.sigma_evening_h,
            "amp_evening": f.amp_evening,
            "floor": f.floor,
            "rmse": f.rmse,
        }
    w = pipe.night_window
    doc = {
        "window_start_h": w[0],
        "window_end_h": w[1],
        "label": window_label(w),
        "source": "override" if pipe.config.night_window is not None else "detected",
        "daily_fit": fit,
        "bin_minutes": pipe.config.bin_minutes,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_correlations_csv(pipe: Pipeline, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("variable,band,rank_lo,rank_hi,center_rank,n_cells,corr,note\n")
        for name in ("activity", "mobility"):
            for b in pipe.bands[name]:
                c = "" if b.corr is None else repr(float(b.corr))
                fh.write(
                    f"{name},{b.band},{b.rank_lo!r},{b.rank_hi!r},"
                    f"{b.center_rank!r},{b.n_cells},{c},{b.note}\n"
                )


def area_doc(pipe: Pipeline) -> dict:
    """Per-class table as written to areas.json and echoed in the summary."""
    area_tab = pipe.area_table
    areas = {}
    for a in range(1, 6):
        entry = dict(area_tab[a])
        if isinstance(entry.get("mean_density_km2"), float) and math.isnan(
            entry["mean_density_km2"]
        ):
            entry["mean_density_km2"] = None
        entry["reference_density_km2"] = REFERENCE_AREA_DENSITY_KM2[a - 1]
        areas[str(a)] = entry
    return areas


def build_summary(pipe: Pipeline) -> dict:
    w = pipe.night_window
    fit = None
    if pipe.config.night_window is None:
        f = pipe.circadian_fit
        fit = {
            "mu_day_h": f.mu_day_h,
            "sigma_day_h": f.sigma_day_h,
            "mu_evening_h": f.mu_evening_h,
            "sigma_evening_h": f.sigma_evening_h,
            "floor": f.floor,
            "rmse": f.rmse,
        }
    homes = pipe.homes
    with_home = sum(1 for h in homes.values() if h is not None)
    corr = pipe.correlations
    areas = area_doc(pipe)
    weekly = {}
    monthly_act = {}
    monthly_mob = {}
    for s in pipe.patterns_bundle:
        if getattr(s, "cohort", "all") != "all" or s.statistic != "mean":
            continue
        table = {b: (None if np.isnan(s.stat[i]) else float(s.stat[i])) for i, b in enumerate(s.bins)}
        if s.axis == "dow" and s.value == "activity":
            weekly = table
        elif s.axis == "month" and s.value == "activity":
            monthly_act = table
        elif s.axis == "month" and s.value == "mobility":
            monthly_mob = table
    rs = pipe.ranksize
    rank_size_doc = (
        {"skipped": rs}
        if isinstance(rs, str)
        else {
            "exponent": rs.exponent,
            "intercept": rs.intercept,
            "r2": rs.r2,
            "n_cells": rs.n_cells,
            "n_tail": rs.n_tail,
            "min_rank": rs.min_rank,
        }
    )
    return {
        "package_version": __version__,
        "analysis_year": pipe.config.analysis_year,
        "ingest": asdict(pipe.ingest.stats),
        "daily_fit": fit,
        "inactivity_window": {
            "start_h": w[0],
            "end_h": w[1],
            "label": window_label(w),
            "source": "override" if pipe.config.night_window is not None else "detected",
        },
        "homes": {
            "individuals": len(homes),
            "with_home": with_home,
            "without_home": len(homes) - with_home,
            "at_sea": sum(1 for v in pipe.at_sea.values() if v),
        },
        "grid": {
            "step_deg": pipe.config.grid_step,
            "inhabited_cells": len(pipe.grid_density),
            "residents": int(pipe.grid_density.population.sum()),
        },
        "correlations": {
            "activity": {**corr["activity"], "reference": REFERENCE_CORR_ACTIVITY},
            "mobility": {**corr["mobility"], "reference": REFERENCE_CORR_MOBILITY},
            "rg": corr["rg"],
        },
        "rank_size": rank_size_doc,
        "areas": areas,
        "weekly_activity": weekly,
        "monthly_activity": monthly_act,
        "monthly_mobility": monthly_mob,
    }


def write_plot_data(pipe: Pipeline, out_dir) -> list[str]:
    """Two-column files for external plotting, one per series."""
    pd = os.path.join(out_dir, "plotdata")
    os.makedirs(pd, exist_ok=True)
    written = []

    def emit(name, xs, ys, xh, yh):
        p = os.path.join(pd, name)
        with open(p, "w", newline="", encoding="utf-8") as fh:
            fh.write(f"{xh},{yh}\n")
            for x, y in zip(xs, ys):
                fh.write(f"{x!r},{y!r}\n")
        written.append(os.path.join("plotdata", name))

    act = pipe.activity_profile
    emit(
        "daily_activity.csv",
        [float(v) for v in act.bin_centers_hours()],
        [float(v) for v in act.values],
        "hour",
        "activity",
    )
    d = np.sort(pipe.grid_density.density)[::-1]
    emit(
        "rank_size.csv",
        [float(v) for v in np.log10(np.arange(1, len(d) + 1))],
        [float(v) for v in np.log10(np.maximum(d, 1e-300))],
        "log10_rank",
        "log10_density",
    )
    for name in ("activity", "mobility"):
        bands = [b for b in pipe.bands[name] if b.corr is not None]
        emit(
            f"bands_{name}.csv",
            [b.center_rank for b in bands],
            [b.corr for b in bands],
            "center_rank",
            "corr",
        )
    for s in pipe.patterns_bundle:
        xs = list(range(len(s.bins)))
        ys = [None if np.isnan(v) else float(v) for v in s.stat]
        p = os.path.join(pd, f"pattern_{_series_key(s)}.csv")
        with open(p, "w", newline="", encoding="utf-8") as fh:
            fh.write("bin,stat\n")
            for b, v in zip(s.bins, ys):
                fh.write(f"{b},{'' if v is None else repr(v)}\n")
        written.append(os.path.join("plotdata", f"pattern_{_series_key(s)}.csv"))
    return written


STAGE_OUTPUTS = {
    "profile": "daily_profile.csv",
    "window": "window.json",
    "homes": "homes.csv",
    "metrics": "metrics.csv",
    "grid": "grid.csv",
    "areas": "areas.json",
    "correlations": "correlations.csv",
    "patterns": "patterns.csv",
    "strata": "strata.csv",
    "summary": "summary.json",
}


def write_outputs(pipe: Pipeline, out_dir, stages, plot_data: bool = False) -> dict[str, str]:
    """Write the requested stage outputs; returns {relative path: sha256}.
    The caller owns cleanup of anything listed if a later stage fails."""
    os.makedirs(out_dir, exist_ok=True)
    done: dict[str, str] = {}

    def record(rel):
        done[rel] = _sha256(os.path.join(out_dir, rel))

    if "profile" in stages:
        write_profile_csv(pipe, os.path.join(out_dir, STAGE_OUTPUTS["profile"]))
        record(STAGE_OUTPUTS["profile"])
    if "window" in stages:
        write_window_json(pipe, os.path.join(out_dir, STAGE_OUTPUTS["window"]))
        record(STAGE_OUTPUTS["window"])
    if "homes" in stages:
        write_homes_csv(
            pipe.homes, pipe.night_counts, pipe.at_sea, os.path.join(out_dir, STAGE_OUTPUTS["homes"])
        )
        record(STAGE_OUTPUTS["homes"])
    if "metrics" in stages:
        write_metrics_csv(pipe.iter_metric_rows(), os.path.join(out_dir, STAGE_OUTPUTS["metrics"]))
        record(STAGE_OUTPUTS["metrics"])
    if "grid" in stages:
        write_grid_csv(pipe.grid_density, pipe.labels, os.path.join(out_dir, STAGE_OUTPUTS["grid"]))
        record(STAGE_OUTPUTS["grid"])
    if "areas" in stages:
        with open(os.path.join(out_dir, STAGE_OUTPUTS["areas"]), "w", encoding="utf-8") as fh:
            json.dump(area_doc(pipe), fh, indent=2, sort_keys=True)
            fh.write("\n")
        record(STAGE_OUTPUTS["areas"])
    if "correlations" in stages:
        write_correlations_csv(pipe, os.path.join(out_dir, STAGE_OUTPUTS["correlations"]))
        record(STAGE_OUTPUTS["correlations"])
    if "patterns" in stages:
        write_pattern_csv(pipe.patterns_bundle, os.path.join(out_dir, STAGE_OUTPUTS["patterns"]))
        record(STAGE_OUTPUTS["patterns"])
    if "strata" in stages and pipe.strata is not None:
        write_strata_csv(pipe.strata, os.path.join(out_dir, STAGE_OUTPUTS["strata"]))
        record(STAGE_OUTPUTS["strata"])
    if "summary" in stages:
        with open(os.path.join(out_dir, STAGE_OUTPUTS["summary"]), "w", encoding="utf-8") as fh:
            json.dump(build_summary(pipe), fh, indent=2, sort_keys=True)
            fh.write("\n")
        record(STAGE_OUTPUTS["summary"])
    if plot_data:
        for rel in write_plot_data(pipe, out_dir):
            record(rel)
    return done


def write_manifest(pipe: Pipeline, out_dir, outputs: dict[str, str], command: str) -> None:
    """Run provenance: inputs, config, output digests, timings. The
    manifest is the one output that may differ between identical reruns
    (it carries timings)."""
    cfg = asdict(pipe.config)
    inputs = {}
    for name, p in (
        ("cdr", pipe.cdr_path),
        ("towers", pipe.towers_path),
        ("demographics", pipe.demographics_path),
    ):
        if p is not None:
            inputs[name] = {
                "path": str(p),
                "sha256": _sha256(p) if os.path.isfile(p) else None,
            }
    doc = {
        "command": command,
        "package_version": __version__,
        "config": cfg,
        "threads": pipe.threads,
        "inputs": inputs,
        "outputs": outputs,
        "timings_s": pipe.timings,
        "ingest_stats": asdict(pipe.ingest.stats) if "ingest" in pipe._cache else None,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
