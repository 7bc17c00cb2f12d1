"""Command line front-end.

One subcommand per pipeline stage plus `report` (everything), `generate`
(synthetic corpus), `validate` (score a generated corpus against its
ground truth) and `demo` (generate + report in one go). Every analysis
run writes a manifest.json describing inputs, config and output digests.

Exit codes: 0 success, 1 usage error, 2 data error. Partially written
outputs are removed when a run fails.
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
import time
from dataclasses import asdict

from . import __version__
from .density import DensityError
from .home import UnimodalProfileError
from .ingest import ingest_file, write_spool
from .metrics import GRANULARITIES, WindowSpec
from .patterns import PatternError
from .pipeline import (
    STAGE_OUTPUTS,
    AnalysisConfig,
    Pipeline,
    PipelineError,
    _sha256,
    window_label,
    write_manifest,
    write_outputs,
)
from .records import CdrError, load_towers, parse_timestamp
from .synth import (
    CDR_FILE,
    CONFIG_FILE,
    DEMOGRAPHICS_FILE,
    TOWERS_FILE,
    TRUTH_FILE,
    GenConfig,
    generate,
    validate_corpus,
)

_DATA_ERRORS = (
    CdrError,
    PipelineError,
    DensityError,
    UnimodalProfileError,
    PatternError,
    FileNotFoundError,
    IsADirectoryError,
    NotADirectoryError,
    PermissionError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit 2; usage errors are 1 here
        raise UsageError(message)


# ------------------------------------------------------------ flag parsing


def _parse_window(text: str) -> WindowSpec:
    if text in GRANULARITIES and text != "range":
        return WindowSpec(text)
    if "/" in text:
        lo, hi = text.split("/", 1)
        try:
            t0 = parse_timestamp(lo)
            t1 = parse_timestamp(hi)
        except CdrError as e:
            raise UsageError(f"bad --window range: {e}")
        if t1 <= t0:
            raise UsageError("--window range end must be after start")
        return WindowSpec("range", t0, t1)
    raise UsageError(
        f"--window must be one of {', '.join(g for g in GRANULARITIES if g != 'range')} "
        "or an ISO range START/END"
    )


def _parse_night_window(text: str) -> tuple[float, float]:
    try:
        lo, hi = text.split("-", 1)
        h0, m0 = lo.split(":")
        h1, m1 = hi.split(":")
        start = int(h0) + int(m0) / 60.0
        end = int(h1) + int(m1) / 60.0
    except ValueError:
        raise UsageError("--night-window must look like HH:MM-HH:MM")
    if not (0 <= start < 24 and 0 < end <= 24):
        raise UsageError("--night-window hours out of range")
    return (start, end)


def _parse_bounds(text: str) -> tuple[int, int, int, int]:
    try:
        parts = tuple(int(p) for p in text.split(","))
    except ValueError:
        raise UsageError("--area-bounds must be four comma-separated integers")
    if len(parts) != 4 or any(b <= 0 for b in parts) or list(parts) != sorted(set(parts)):
        raise UsageError("--area-bounds must be four strictly increasing positive ranks")
    return parts


def _analysis_config(args) -> AnalysisConfig:
    try:
        return AnalysisConfig(
            analysis_year=args.year,
            grid_step=args.grid_step,
            window=_parse_window(args.window),
            night_window=_parse_night_window(args.night_window) if args.night_window else None,
            area_boundaries=_parse_bounds(args.area_bounds),
            divisor=args.divisor,
            reciprocity=args.reciprocity,
        )
    except ValueError as e:
        raise UsageError(str(e))


def _add_analysis_flags(p: _Parser, *, demographics=True):
    p.add_argument("--cdr", required=True, help="CDR csv file or spool directory")
    p.add_argument("--towers", required=True, help="tower csv (tower_id,lat,lon)")
    if demographics:
        p.add_argument("--demographics", default=None, help="csv (ego_id,gender,age or birth year)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--grid-step", type=float, default=0.05, help="grid cell size, degrees")
    p.add_argument("--window", default="year", help="metrics windows: granularity or ISO range START/END")
    p.add_argument("--area-bounds", default="30,100,1000,10000", help="rank boundaries r1,r2,r3,r4")
    p.add_argument("--night-window", default=None, help="override detection, HH:MM-HH:MM")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.add_argument("--year", type=int, default=2008, help="analysis year")
    p.add_argument("--divisor", choices=("events", "pairs"), default="events",
                   help="mobility normalization")
    p.add_argument("--reciprocity", choices=("pair", "degree", "none"), default="pair",
                   help="filter rule; none keeps everyone")


def _cleanup(out_dir, names):
    for n in names:
        p = os.path.join(out_dir, n)
        try:
            if os.path.isdir(p):
                shutil.rmtree(p)
            elif os.path.exists(p):
                os.unlink(p)
        except OSError:
            pass


# -------------------------------------------------------------- handlers


def _run_stages(args, stages: set[str], plot_data: bool = False) -> int:
    cfg = _analysis_config(args)
    demographics = getattr(args, "demographics", None)
    stages = set(stages)
    if "strata" in stages and demographics is None:
        stages.discard("strata")
    pipe = Pipeline(args.cdr, args.towers, demographics, cfg, threads=max(1, args.threads))
    names = [STAGE_OUTPUTS[s] for s in stages] + ["manifest.json"]
    if plot_data:
        names.append("plotdata")
    try:
        outputs = write_outputs(pipe, args.out, stages, plot_data=plot_data)
        write_manifest(pipe, args.out, outputs, command=args.command)
    except BaseException:
        _cleanup(args.out, names)
        raise
    for rel in sorted(outputs):
        print(os.path.join(args.out, rel))
    return 0


def _cmd_homes(args) -> int:
    return _run_stages(args, {"profile", "window", "homes"})


def _cmd_metrics(args) -> int:
    return _run_stages(args, {"metrics"})


def _cmd_density(args) -> int:
    return _run_stages(args, {"grid"})


def _cmd_areas(args) -> int:
    return _run_stages(args, {"grid", "areas"})


def _cmd_correlate(args) -> int:
    rc = _run_stages(args, {"correlations"})
    return rc


def _cmd_patterns(args) -> int:
    return _run_stages(args, {"patterns", "strata"})


def _cmd_report(args) -> int:
    return _run_stages(args, set(STAGE_OUTPUTS), plot_data=args.plot_data)


def _cmd_ingest(args) -> int:
    registry = load_towers(args.towers)
    t0 = time.perf_counter()
    result = ingest_file(
        args.cdr,
        registry,
        analysis_year=args.year,
        reciprocity=args.reciprocity,
        keep_peers=True,
    )
    if not result.timelines:
        raise PipelineError("no surviving individuals after filtering")
    names = ["events.csv", "stats.json", "meta.json", "manifest.json"]
    try:
        write_spool(result, registry, args.out)
        outputs = {n: _sha256(os.path.join(args.out, n)) for n in names[:3]}
        doc = {
            "command": "ingest",
            "package_version": __version__,
            "inputs": {
                "cdr": {"path": str(args.cdr),
                        "sha256": _sha256(args.cdr) if os.path.isfile(args.cdr) else None},
                "towers": {"path": str(args.towers), "sha256": _sha256(args.towers)},
            },
            "outputs": outputs,
            "ingest_stats": asdict(result.stats),
            "timings_s": {"ingest": round(time.perf_counter() - t0, 3)},
        }
        with open(os.path.join(args.out, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except BaseException:
        _cleanup(args.out, names)
        raise
    for n in names:
        print(os.path.join(args.out, n))
    return 0


def _gen_config(args) -> GenConfig:
    base = {}
    if args.gen_config:
        try:
            with open(args.gen_config, encoding="utf-8") as fh:
                base = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise CdrError(f"cannot read --gen-config: {e}")
        if not isinstance(base, dict):
            raise CdrError("--gen-config must hold a JSON object")
    if args.n is not None:
        base["n_individuals"] = args.n
    if args.cells is not None:
        base["n_cells"] = args.cells
    if args.seed is not None:
        base["seed"] = args.seed
    try:
        return GenConfig.from_dict(base)
    except (TypeError, ValueError) as e:
        raise UsageError(f"bad generator config: {e}")


def _cmd_generate(args) -> int:
    cfg = _gen_config(args)
    os.makedirs(args.out, exist_ok=True)
    names = [CDR_FILE, TOWERS_FILE, DEMOGRAPHICS_FILE, TRUTH_FILE, CONFIG_FILE, "manifest.json"]
    t0 = time.perf_counter()
    try:
        generate(cfg, args.out, threads=max(1, args.threads))
        outputs = {n: _sha256(os.path.join(args.out, n)) for n in names[:5]}
        doc = {
            "command": "generate",
            "package_version": __version__,
            "config": asdict(cfg),
            "outputs": outputs,
            "timings_s": {"generate": round(time.perf_counter() - t0, 3)},
        }
        with open(os.path.join(args.out, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except BaseException:
        _cleanup(args.out, names)
        raise
    for n in names:
        print(os.path.join(args.out, n))
    return 0


def _cmd_validate(args) -> int:
    card = validate_corpus(args.corpus, threads=max(1, args.threads),
                           reciprocity=args.reciprocity)
    for line in card.lines():
        print(line)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        card.to_json(os.path.join(args.out, "scorecard.json"))
        print(os.path.join(args.out, "scorecard.json"))
    if card.passed:
        print("all checks passed")
        return 0
    print("some checks failed", file=sys.stderr)
    return 2


def _cmd_demo(args) -> int:
    corpus = os.path.join(args.out, "corpus")
    report_dir = os.path.join(args.out, "report")
    cfg = GenConfig(n_individuals=args.n, seed=args.seed)
    os.makedirs(corpus, exist_ok=True)
    generate(cfg, corpus, threads=max(1, args.threads))
    print(f"corpus: {corpus} ({cfg.n_individuals} individuals, seed {cfg.seed})")
    acfg = AnalysisConfig(
        analysis_year=cfg.analysis_year,
        grid_step=cfg.grid_step,
        area_boundaries=cfg.area_boundaries,
    )
    pipe = Pipeline(
        os.path.join(corpus, CDR_FILE),
        os.path.join(corpus, TOWERS_FILE),
        os.path.join(corpus, DEMOGRAPHICS_FILE),
        acfg,
        threads=max(1, args.threads),
    )
    try:
        outputs = write_outputs(pipe, report_dir, set(STAGE_OUTPUTS), plot_data=True)
        write_manifest(pipe, report_dir, outputs, command="demo")
    except BaseException:
        _cleanup(report_dir, list(STAGE_OUTPUTS.values()) + ["manifest.json", "plotdata"])
        raise
    w = pipe.night_window
    corr = pipe.correlations
    print(f"inactivity window: {window_label(w)}")
    act = corr["activity"]["value"]
    mob = corr["mobility"]["value"]
    print(f"density-activity correlation: {act:+.3f}" if act is not None else
          "density-activity correlation: undefined")
    print(f"density-mobility correlation: {mob:+.3f}" if mob is not None else
          "density-mobility correlation: undefined")
    print(f"report: {report_dir} ({len(outputs)} files)")
    return 0


# ----------------------------------------------------------------- parser


def _build_parser() -> _Parser:
    p = _Parser(prog="cdrmob", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("generate", help="write a synthetic corpus with ground truth")
    sp.add_argument("--out", required=True)
    sp.add_argument("--n", type=int, default=None, help="number of individuals")
    sp.add_argument("--cells", type=int, default=None, help="number of settlements")
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    sp.add_argument("--gen-config", default=None, help="JSON file of generator settings")
    sp.set_defaults(func=_cmd_generate)

    sp = sub.add_parser("ingest", help="filter a CDR file into a reusable spool")
    sp.add_argument("--cdr", required=True)
    sp.add_argument("--towers", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--year", type=int, default=2008)
    sp.add_argument("--reciprocity", choices=("pair", "degree", "none"), default="pair")
    sp.set_defaults(func=_cmd_ingest)

    for name, fn, hlp in (
        ("homes", _cmd_homes, "daily profile, rhythm fit, inactivity window, home locations"),
        ("metrics", _cmd_metrics, "per-individual activity, mobility and gyration radius"),
        ("density", _cmd_density, "population grid from detected homes"),
        ("areas", _cmd_areas, "grid plus density-class table"),
        ("correlate", _cmd_correlate, "density vs metric rank correlations by band"),
        ("patterns", _cmd_patterns, "temporal patterns and demographic strata"),
        ("report", _cmd_report, "full pipeline with summary"),
    ):
        sp = sub.add_parser(name, help=hlp)
        _add_analysis_flags(sp)
        if name == "report":
            sp.add_argument("--plot-data", action="store_true",
                            help="also write two-column series under plotdata/")
        sp.set_defaults(func=fn)

    sp = sub.add_parser("validate", help="score a generated corpus against its ground truth")
    sp.add_argument("--corpus", required=True, help="directory written by generate")
    sp.add_argument("--out", default=None, help="where to write scorecard.json")
    sp.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    sp.add_argument("--reciprocity", choices=("pair", "degree", "none"), default="pair")
    sp.set_defaults(func=_cmd_validate)

    sp = sub.add_parser("demo", help="generate a small corpus and run the full report")
    sp.add_argument("--out", required=True)
    sp.add_argument("--n", type=int, default=2000)
    sp.add_argument("--seed", type=int, default=7)
    sp.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    sp.set_defaults(func=_cmd_demo)

    return p


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except _DATA_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
