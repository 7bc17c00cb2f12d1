"""Shared fixtures: session-scoped synthetic corpora and pipelines.

Corpora are generated once per session into the pytest tmp factory. Each
fixture returns (directory, ground truth). Pipelines are cached so the
expensive stages run once and are shared by every test that reads them.
"""

import os

import pytest

from cdrmob.metrics import WindowSpec
from cdrmob.pipeline import AnalysisConfig, Pipeline
from cdrmob.synth import (
    CDR_FILE,
    DEMOGRAPHICS_FILE,
    TOWERS_FILE,
    GenConfig,
    GroundTruth,
    generate,
)

_THREADS = min(4, os.cpu_count() or 1)

# month table with no August dip, for control corpora
_FLAT_MONTHS = (1.02, 1.0, 1.0, 0.99, 1.0, 1.01, 1.0, 1.0, 1.0, 1.0, 0.99, 1.01)


def _make_corpus(tmp_path_factory, name: str, cfg: GenConfig):
    out = tmp_path_factory.mktemp(name)
    truth = generate(cfg, out, threads=_THREADS)
    return out, truth


def _make_pipeline(corpus, truth: GroundTruth, threads: int = _THREADS) -> Pipeline:
    cfg = AnalysisConfig(
        analysis_year=truth.analysis_year,
        grid_step=truth.grid_step,
        window=WindowSpec("year"),
        area_boundaries=truth.area_boundaries,
    )
    return Pipeline(
        os.path.join(corpus, CDR_FILE),
        os.path.join(corpus, TOWERS_FILE),
        os.path.join(corpus, DEMOGRAPHICS_FILE),
        cfg,
        threads=threads,
    )


@pytest.fixture(scope="session")
def default_corpus(tmp_path_factory):
    """The stock world: 10k individuals, 400 settlements, every effect on."""
    return _make_corpus(tmp_path_factory, "default_corpus", GenConfig())


@pytest.fixture(scope="session")
def default_pipeline(default_corpus):
    corpus, truth = default_corpus
    return _make_pipeline(corpus, truth), truth


@pytest.fixture(scope="session")
def null_corpus(tmp_path_factory):
    """Couplings zeroed: no density effect on activity or travel, same
    month table everywhere, symmetric genders, no spam. Most of the 10000
    settlements hold a single resident, so activity is kept high enough
    that nobody lacks night events and every cell stays occupied; pushing
    the floor much higher instead would drown the inactivity-window
    contrast in noise."""
    cfg = GenConfig(
        n_individuals=20_000,
        n_cells=10_000,
        beta=0.0,
        gamma=0.0,
        base_daily_events=1.0,
        night_floor=0.12,
        month_mult_dense=_FLAT_MONTHS,
        month_mult_sparse=_FLAT_MONTHS,
        female_activity_excess=(0.0, 0.0, 0.0, 0.0, 0.0),
        female_mobility_excess=0.0,
        spam_fraction=0.0,
        area_boundaries=(30, 100, 1000, 4000),
        seed=11,
    )
    return _make_corpus(tmp_path_factory, "null_corpus", cfg)


@pytest.fixture(scope="session")
def null_pipeline(null_corpus):
    corpus, truth = null_corpus
    return _make_pipeline(corpus, truth), truth


@pytest.fixture(scope="session")
def flip_corpus(tmp_path_factory):
    """Activity-density coupling flips sign at density rank 100. The
    raised night floor keeps every ego's night-event count healthy, so
    home survival cannot correlate with activity."""
    cfg = GenConfig(
        n_individuals=10_000,
        n_cells=400,
        beta=0.0,
        activity_flip=(0.4, -0.5, 100),
        base_daily_events=1.0,
        night_floor=0.12,
        month_mult_dense=_FLAT_MONTHS,
        month_mult_sparse=_FLAT_MONTHS,
        female_activity_excess=(0.0, 0.0, 0.0, 0.0, 0.0),
        female_mobility_excess=0.0,
        spam_fraction=0.0,
        seed=23,
    )
    return _make_corpus(tmp_path_factory, "flip_corpus", cfg)


@pytest.fixture(scope="session")
def flip_pipeline(flip_corpus):
    corpus, truth = flip_corpus
    return _make_pipeline(corpus, truth), truth


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Cheap corpus for CLI and plumbing tests."""
    return _make_corpus(tmp_path_factory, "small_corpus", GenConfig(n_individuals=800, seed=42))


@pytest.fixture(scope="session")
def megarow_corpus(tmp_path_factory):
    """Roughly a million rows for the throughput and determinism checks."""
    cfg = GenConfig(n_individuals=5_000, base_daily_events=0.45, seed=5)
    return _make_corpus(tmp_path_factory, "megarow_corpus", cfg)
