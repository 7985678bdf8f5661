"""Shared builders for the end-to-end tests."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from src.data_processing.dataset import Dataset
    from src.hashing.incremental import ModificationEvent, TrainState
    from src.hashing.trainer import HashModel, TrainConfig

SCENARIOS = ("add-classes", "delete-classes", "add-images")


@dataclass
class UpdateScenario:
    initial: Dataset
    events: list[ModificationEvent]
    test: Dataset


def svm_instance(seed: int, n: int, dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian points labeled by a random hyperplane with 10% flipped labels."""
    rng = np.random.default_rng(seed)
    phi = rng.standard_normal((n, dim))
    targets = np.where(phi @ rng.standard_normal(dim) >= 0.0, 1.0, -1.0)
    flip = rng.random(n) < 0.1
    targets[flip] *= -1.0
    return phi, targets


def retrieval_map(model: HashModel, test: Dataset) -> float:
    from src.evaluation.retrieval_eval import CodeDatabase, evaluate
    from src.hashing.trainer import encode_batch

    report = evaluate(CodeDatabase.from_codes(encode_batch(model, test.features), test.labels))
    assert report.map is not None
    return report.map


def update_scenario(kind: str, seed: int, per_class: int = 40) -> UpdateScenario:
    from src.data_processing.dataset import generate_blobs
    from src.hashing.incremental import AddClasses, AddImages, DeleteClasses

    train = generate_blobs(6, per_class, 2, 0.1, seed=seed)
    test = generate_blobs(6, per_class // 2, 2, 0.1, seed=seed + 1000)
    old, new = ["0", "1", "2", "3"], ["4", "5"]

    if kind == "add-classes":
        return UpdateScenario(
            train.select_classes(old), [AddClasses(train.select_classes(new))], test
        )
    if kind == "delete-classes":
        return UpdateScenario(train, [DeleteClasses(tuple(new))], test.select_classes(old))
    if kind == "add-images":
        extra = generate_blobs(6, per_class // 2, 2, 0.1, seed=seed + 2000)
        return UpdateScenario(train, [AddImages(extra)], test)
    raise ValueError(f"unknown scenario {kind!r}")


def scenario_config(seed: int) -> TrainConfig:
    from src.hashing.trainer import TrainConfig

    return TrainConfig(bits=16, anchors=32, sigma=0.5, max_iter=3, seed=seed)


def initial_state(scenario: UpdateScenario, config: TrainConfig) -> TrainState:
    from src.hashing.incremental import TrainState
    from src.hashing.trainer import train

    return TrainState.from_result(scenario.initial, train(scenario.initial, config))
