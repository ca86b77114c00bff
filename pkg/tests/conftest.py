"""Shared fixtures: a tiny classifier config for fast model tests and a
small simulated project on disk."""

import os

# Reductions inside threaded BLAS can reorder; the determinism guarantees
# are stated for one thread, so pin it before numpy loads.
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")

import pytest

from teamtrack.config import ProjectConfig
from teamtrack.project import Project
from teamtrack.simulate import SimConfig, simulate


def tiny_model_config(**overrides) -> ProjectConfig:
    """Scaled-down classifier config: fast to train, same code paths."""
    base = dict(
        n_players=2,
        embedding_dim=12,
        model_dim=8,
        n_queries=2,
        n_top_queries=1,
        encoder_layers=1,
        decoder_layers=1,
        attention_heads=2,
        samples_per_track=3,
        min_track_len=3,
        epochs=30,
    )
    base.update(overrides)
    return ProjectConfig(**base)


@pytest.fixture(scope="session")
def tiny_config() -> ProjectConfig:
    return tiny_model_config()


@pytest.fixture(scope="session")
def small_sim_dir(tmp_path_factory):
    """A small simulated game on disk: 3 players per team, 300 frames."""
    out = tmp_path_factory.mktemp("smallgame")
    simulate(SimConfig(n_players=3, n_distractors=2, frames=300, seed=11), out)
    return out


@pytest.fixture()
def small_project(small_sim_dir, tmp_path):
    """Fresh mutable copy of the small game (projects carry state)."""
    import shutil

    dst = tmp_path / "project"
    shutil.copytree(small_sim_dir, dst)
    return Project(dst)
