"""Shared fixtures: tiny dimensions and seeded generators."""
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from gckd.data.synth import DatasetSpec, generate
from gckd.losses.report import LossConfig
from gckd.model.graph import GraphConfig
from gckd.model.memory import MemoryConfig
from gckd.model.params import ModelConfig
from gckd.training.config import TrainConfig
from gckd.training.gradcheck import fill_banks
from gckd.training.pipeline import build_setup, dataset_width, init_state
from gckd.utils.settings import ExperimentConfig, ExperimentSettings, dumps

ROOT = Path(__file__).resolve().parent.parent


def unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def make_config(out_dir: str = "runs/test", **train_overrides) -> ExperimentConfig:
    """Toy-sized settings: D=8, B=4, C=16, K=3, L=2."""
    return ExperimentConfig(
        dataset=DatasetSpec(num_identities_source=6, num_identities_target=6,
                            samples_per_identity_per_modality=2, d_raw=8, rng_seed=3),
        model=ModelConfig(embed_dim=8),
        graph=GraphConfig(k=3, layers=2),
        memory=MemoryConfig(capacity=16, min_fill=4),
        loss=LossConfig(delta=0.3),
        train=replace(TrainConfig(batch_size=4, lr=1e-3, epochs=1, warmup_epochs=2, warmup_batch_size=8),
                      **train_overrides),
        experiment=ExperimentSettings(out_dir=out_dir, seeds=2),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    return make_config()


@pytest.fixture
def tiny_data(tiny_config):
    return generate(tiny_config.dataset)


@pytest.fixture
def toy_instance(tiny_config, tiny_data):
    """(state, setup, dataset) with every queue filled to capacity."""
    dataset, _ = tiny_data
    state = init_state(tiny_config, dataset_width(dataset))
    setup = build_setup(tiny_config, "cmkd_gmp")
    fill_banks(state, dataset.source_pairs, dataset.target_images, dataset.target_texts,
               tiny_config.memory.capacity)
    return state, setup, dataset


@pytest.fixture
def config_file(tmp_path):
    """Write a settings document and return its path; accepts an ExperimentConfig."""

    def write(config: ExperimentConfig, name: str = "settings.ini") -> Path:
        path = tmp_path / name
        path.write_text(dumps(config), encoding="utf-8")
        return path

    return write
