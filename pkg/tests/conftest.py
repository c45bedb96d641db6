"""Shared fixtures: a tiny experiment that trains in well under a second."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
import yaml

from imaginenet.config import (
    DatasetConfig,
    EvalConfig,
    ExperimentConfig,
    TrainConfig,
)
from imaginenet.fusion import FusionHeadConfig
from imaginenet.label_space import default_label_space
from imaginenet.pipeline import prepare_split

TINY = {
    "name": "tiny",
    "tag": "seed1",
    "mode": "imagine",
    "seed": 1,
    "dataset": {
        "D": 16,
        "T": 4,
        "noise": 0.3,
        "train_per_class": 6,
        "test_per_class": 4,
        "per_composite": 2,
    },
    "head": {"variant": "FC", "hidden": 32},
    "aggregation": {"kind": "weighted_random"},
    "train": {
        "epochs": 3,
        "lr": 0.05,
        "momentum": 0.9,
        "schedule": [[2, 0.1]],
        "batch_size": 16,
    },
}


def tiny_experiment(**overrides) -> ExperimentConfig:
    return ExperimentConfig(
        name="tiny",
        tag="seed1",
        seed=overrides.pop("seed", 1),
        mode=overrides.pop("mode", "imagine"),
        dataset=DatasetConfig(
            D=16, T=4, noise=0.3, train_per_class=6, test_per_class=4, per_composite=2
        ),
        head=overrides.pop("head", FusionHeadConfig(hidden=32)),
        train=overrides.pop(
            "train",
            TrainConfig(
                epochs=3, lr=0.05, momentum=0.9, schedule=((2, 0.1),), batch_size=16
            ),
        ),
        eval=overrides.pop("eval", EvalConfig()),
        **overrides,
    )


@pytest.fixture
def tiny_config() -> ExperimentConfig:
    return tiny_experiment()


@pytest.fixture(scope="session")
def label_space():
    return default_label_space()


@pytest.fixture(scope="session")
def tiny_split(label_space):
    return prepare_split(tiny_experiment(), label_space)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)


@pytest.fixture
def tiny_yaml(tmp_path: Path) -> Path:
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(TINY))
    return path


@pytest.fixture(autouse=True)
def _no_seed_env(monkeypatch):
    monkeypatch.delenv("IMAGINE_SEED", raising=False)
