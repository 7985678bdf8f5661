from __future__ import annotations

from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import pytest

if TYPE_CHECKING:
    from src.data_processing.dataset import Dataset
    from src.hashing.incremental import TrainState
    from src.hashing.trainer import TrainConfig


@pytest.fixture(scope="session")
def blobs() -> Dataset:
    from src.data_processing.dataset import generate_blobs

    return generate_blobs(num_classes=4, per_class=30, dim=2, spread=0.08, seed=7)


@pytest.fixture(scope="session")
def small_config() -> TrainConfig:
    from src.hashing.trainer import TrainConfig

    return TrainConfig(
        bits=8,
        anchors=24,
        sigma=0.5,
        lam=1.0,
        gamma=1.0,
        max_iter=4,
        seed=0,
    )


@pytest.fixture(scope="session")
def trained_state(blobs: Dataset, small_config: TrainConfig) -> TrainState:
    from src.hashing.incremental import TrainState
    from src.hashing.trainer import train

    return TrainState.from_result(blobs, train(blobs, small_config))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def config_dir(tmp_path: Path) -> Path:
    """A config directory holding the real training schema."""
    import shutil

    root = Path(__file__).resolve().parents[1] / "config"
    target = tmp_path / "config"
    (target / "schemas").mkdir(parents=True)
    shutil.copy(root / "schemas" / "training.schema.json", target / "schemas")
    shutil.copy(root / "default_training.json", target)
    return target
