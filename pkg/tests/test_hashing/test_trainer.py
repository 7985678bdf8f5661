from __future__ import annotations

import logging
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import pytest

if TYPE_CHECKING:
    from src.data_processing.dataset import Dataset
    from src.hashing.incremental import TrainState
    from src.hashing.trainer import TrainConfig, TrainingHistory


@pytest.mark.unit
class TestTrainConfig:
    def test_defaults(self) -> None:
        from src.hashing.trainer import TrainConfig

        config = TrainConfig(bits=32, anchors=1000)

        assert (config.cx, config.cb, config.gamma, config.max_iter) == (16.0, 1e-3, 1e5, 5)
        assert config.effective_lambda == pytest.approx(32e8)
        assert TrainConfig(bits=4, anchors=2, lam=0.0).effective_lambda == 0.0

    @pytest.mark.parametrize(
        "overrides",
        [
            {"bits": 0},
            {"anchors": 0},
            {"cx": 0.0},
            {"lam": -1.0},
            {"gamma": -1.0},
            {"max_iter": 0},
            {"sigma": 0.0},
            {"epsilon": -1.0},
            {"seed": -1},
            {"threads": 0},
            {"max_planes": 1},
        ],
    )
    def test_validation(self, overrides: dict) -> None:
        from src.common.exceptions import ConfigurationError
        from src.hashing.trainer import TrainConfig

        with pytest.raises(ConfigurationError):
            TrainConfig(**{"bits": 8, "anchors": 4, **overrides})

    def test_from_dict_accepts_wrapper(self) -> None:
        from src.hashing.trainer import TrainConfig

        wrapped = TrainConfig.from_dict({"training": {"bits": 8, "anchors": 4, "gamma": 2.0}})
        flat = TrainConfig.from_dict({"bits": 8, "anchors": 4, "gamma": 2.0})

        assert wrapped == flat
        assert wrapped.gamma == 2.0

    def test_from_dict_rejects_unknown_and_missing_keys(self) -> None:
        from src.common.exceptions import ConfigurationError
        from src.hashing.trainer import TrainConfig

        with pytest.raises(ConfigurationError, match="Unknown training options: colour"):
            TrainConfig.from_dict({"bits": 8, "anchors": 4, "colour": "red"})
        with pytest.raises(ConfigurationError, match="bits and anchors"):
            TrainConfig.from_dict({"bits": 8})

    def test_from_file_validates_schema(self, config_dir: Path) -> None:
        import json

        from src.common.config import ConfigLoader
        from src.common.exceptions import ConfigurationError
        from src.hashing.trainer import TrainConfig

        loader = ConfigLoader(config_dir)
        config = TrainConfig.from_file(config_dir / "default_training.json", loader)
        assert config.bits == 32
        assert config.lam is None

        bad = config_dir / "bad.json"
        bad.write_text(json.dumps({"training": {"bits": 8, "anchors": 4, "cx": -1}}))
        with pytest.raises(ConfigurationError, match="validation failed"):
            TrainConfig.from_file(bad, loader)

    def test_to_dict_and_overrides(self) -> None:
        from src.hashing.trainer import TrainConfig

        config = TrainConfig(bits=8, anchors=4, threads=3)

        assert config.to_dict()["threads"] == 3
        assert "threads" not in config.to_dict(include_threads=False)
        assert TrainConfig.from_dict(config.to_dict()) == config
        updated = config.with_overrides(bits=16, sigma=None, seed=5)
        assert (updated.bits, updated.sigma, updated.seed) == (16, None, 5)


@pytest.mark.unit
def test_sign_bits_maps_zero_to_plus_one() -> None:
    from src.hashing.trainer import sign_bits

    bits = sign_bits(np.array([[-0.5, 0.0, 2.0]]))

    np.testing.assert_array_equal(bits, [[-1, 1, 1]])
    assert bits.dtype == np.int8


@pytest.mark.unit
def test_sample_codewords_balanced_and_distinct() -> None:
    from src.hashing.trainer import sample_codewords

    rng = np.random.default_rng(0)
    book = sample_codewords(5, 12, gamma=1.0, rng=rng)

    assert book.shape == (5, 12)
    assert np.unique(book, axis=0).shape[0] == 5
    np.testing.assert_array_equal((book == 1).sum(axis=0), np.full(12, 3))


@pytest.mark.unit
def test_sample_codewords_avoids_existing_rows() -> None:
    from src.hashing.trainer import sample_codewords

    rng = np.random.default_rng(1)
    existing = sample_codewords(3, 4, gamma=0.0, rng=rng)
    book = sample_codewords(3, 4, gamma=0.0, rng=rng, existing=existing)

    merged = np.vstack([existing, book])
    assert np.unique(merged, axis=0).shape[0] == 6


@pytest.mark.unit
def test_sample_codewords_warns_when_space_is_too_small(
    caplog: pytest.LogCaptureFixture,
) -> None:
    from src.hashing.trainer import sample_codewords

    with caplog.at_level(logging.WARNING, logger="src.hashing.trainer"):
        book = sample_codewords(3, 1, gamma=0.0, rng=np.random.default_rng(0))

    assert book.shape == (3, 1)
    assert "Could not draw distinct codewords" in caplog.text


@pytest.mark.unit
def test_init_codes_shares_codeword_within_class() -> None:
    from src.hashing.trainer import init_codes

    labels = np.array([0, 1, 0, 2, 1, 2])
    codes = init_codes(labels, m=6, gamma=1.0, seed=3)

    values = codes.values
    np.testing.assert_array_equal(values[0], values[2])
    np.testing.assert_array_equal(values[1], values[4])
    assert not np.array_equal(values[0], values[1])
    np.testing.assert_array_equal(codes.revisions, np.zeros(6))


@pytest.mark.unit
def test_total_objective_at_zero_weights() -> None:
    from src.hashing.trainer import TrainConfig, total_objective

    config = TrainConfig(bits=2, anchors=1, lam=3.0, cb=0.5, cx=2.0, gamma=0.25)
    codes = np.array([[1, 1], [1, -1], [-1, 1]])
    labels = np.array([0, 1, 1])
    phi = np.ones((3, 2))

    value = total_objective(codes, np.zeros((2, 2)), np.zeros((3, 2)), phi, labels, config)

    # multi-class loss 1 per point, hinge 1 per bit, column sums 1 and 1
    assert value == pytest.approx(3.0 * 0.5 * 3 + 2.0 * 6 + 0.25 * 2)


@pytest.mark.unit
def test_solver_tolerances() -> None:
    from src.hashing.trainer import TrainConfig, solver_tolerances

    config = TrainConfig(bits=4, anchors=2, cx=16.0, cb=1e-3)

    assert solver_tolerances(100, config) == pytest.approx((1.6, 1e-3))
    assert solver_tolerances(100, TrainConfig(bits=4, anchors=2, epsilon=0.2)) == (0.2, 0.2)


@pytest.mark.unit
def test_prepare_features_rejects_degenerate_data() -> None:
    from src.common.exceptions import TrainingError
    from src.data_processing.dataset import Dataset
    from src.hashing.trainer import TrainConfig, prepare_features

    config = TrainConfig(bits=4, anchors=2, sigma=1.0)

    with pytest.raises(TrainingError, match="at least 2"):
        prepare_features(Dataset.from_labels(np.ones((1, 2)), ["a"]), config)
    with pytest.raises(TrainingError, match="identical"):
        prepare_features(Dataset.from_labels(np.ones((3, 2)), ["a", "b", "a"]), config)
    with pytest.raises(TrainingError, match="cannot sample 5 anchors"):
        prepare_features(
            Dataset.from_labels(np.arange(8.0).reshape(4, 2), ["a", "b", "a", "b"]),
            config.with_overrides(anchors=5),
        )


@pytest.mark.unit
def test_trained_model_shapes(trained_state: TrainState, small_config: TrainConfig) -> None:
    model = trained_state.model

    assert model.num_bits == small_config.bits
    assert model.num_classes == 4
    assert model.wx.shape == (small_config.anchors + 1, small_config.bits)
    assert model.wb.shape == (small_config.bits + 1, 4)
    assert model.anchors.sigma == 0.5
    assert trained_state.codes.n == trained_state.dataset.n


@pytest.mark.unit
def test_history_alternates_phases(trained_state: TrainState) -> None:
    history = trained_state.model.history

    phases = [record.phase for record in history.records]
    assert phases == ["svm", "codes"] * history.iterations
    assert history.trained_bits[0] == list(range(trained_state.codes.m))
    assert all(calls >= 1 for calls in history.bit_solver_calls)
    assert history.multiclass_solver_calls >= 1
    assert history.lam == 1.0


@pytest.mark.unit
def test_history_objective_is_monotone(trained_state: TrainState) -> None:
    history = trained_state.model.history

    objectives = history.objectives
    tolerance = history.objective_tolerance
    assert all(b <= a + tolerance for a, b in zip(objectives, objectives[1:]))


@pytest.mark.unit
def test_converged_run_ends_without_code_changes(trained_state: TrainState) -> None:
    history = trained_state.model.history

    if history.converged:
        assert history.records[-1].changed == 0
    else:
        assert history.iterations == trained_state.model.config.max_iter


@pytest.fixture(scope="module")
def overlapping_history(small_config: TrainConfig) -> TrainingHistory:
    from src.data_processing.dataset import generate_blobs
    from src.hashing.trainer import train

    blobs = generate_blobs(num_classes=4, per_class=30, dim=2, spread=0.6, seed=5)
    return train(blobs, small_config.with_overrides(lam=0.01)).history


@pytest.mark.unit
def test_unchanged_columns_skip_their_solver(overlapping_history: TrainingHistory) -> None:
    history = overlapping_history

    assert history.iterations == 3
    assert history.converged
    assert history.trained_bits[0] == list(range(8))
    assert history.trained_bits[1] == list(range(8))
    assert history.trained_bits[2] == [4, 5]
    assert history.bit_solver_calls == [2, 2, 2, 2, 3, 3, 2, 2]
    for j, calls in enumerate(history.bit_solver_calls):
        assert calls == sum(j in bits for bits in history.trained_bits)


@pytest.mark.unit
def test_multi_iteration_run_keeps_objective_monotone(
    overlapping_history: TrainingHistory,
) -> None:
    history = overlapping_history

    assert [r.changed for r in history.records if r.phase == "codes"][-1] == 0
    assert history.unconverged_solves == 0
    objectives = history.objectives
    assert len(objectives) == 6
    assert all(b <= a + history.objective_tolerance for a, b in zip(objectives, objectives[1:]))


@pytest.mark.unit
def test_objective_tolerance_is_rounding_slack() -> None:
    from src.hashing.trainer import PhaseRecord, TrainingHistory

    history = TrainingHistory.for_bits(2)
    assert history.objective_tolerance == pytest.approx(1e-9)

    history.records.append(PhaseRecord(1, "svm", -5e3, 2))
    history.records.append(PhaseRecord(1, "codes", 2e3, 0))
    assert history.objective_tolerance == pytest.approx(5e-6)


@pytest.mark.unit
def test_every_solve_reaches_tolerance(trained_state: TrainState) -> None:
    history = trained_state.model.history

    assert history.unconverged_solves == 0
    assert sum(history.bit_solver_calls) >= trained_state.codes.m


@pytest.mark.unit
def test_encode_separates_blob_classes(trained_state: TrainState, blobs: Dataset) -> None:
    from src.evaluation.retrieval_eval import CodeDatabase, evaluate
    from src.hashing.trainer import encode_batch

    codes = encode_batch(trained_state.model, blobs.features)
    report = evaluate(CodeDatabase.from_codes(codes, blobs.labels))

    assert codes.shape == (blobs.n, 8)
    assert set(np.unique(codes)) <= {-1, 1}
    assert report.map is not None and report.map > 0.8


@pytest.mark.unit
def test_encode_single_vector(trained_state: TrainState, blobs: Dataset) -> None:
    from src.common.exceptions import ValidationError
    from src.hashing.trainer import encode, encode_batch

    model = trained_state.model
    single = encode(model, blobs.features[3])

    np.testing.assert_array_equal(single, encode_batch(model, blobs.features[3:4])[0])
    with pytest.raises(ValidationError, match="single feature vector"):
        encode(model, blobs.features[:2])
    with pytest.raises(ValidationError, match="does not match model width"):
        encode(model, np.zeros(5))


@pytest.mark.unit
def test_hash_model_validates_weight_shapes(trained_state: TrainState) -> None:
    from dataclasses import replace

    from src.common.exceptions import ValidationError

    model = trained_state.model
    with pytest.raises(ValidationError, match="bit weights"):
        replace(model, wx=np.zeros((3, model.num_bits)))
    with pytest.raises(ValidationError, match="class weights"):
        replace(model, wb=np.zeros((model.num_bits, model.num_classes)))


@pytest.mark.unit
def test_history_round_trips_through_dict(trained_state: TrainState) -> None:
    from src.hashing.trainer import TrainingHistory

    history = trained_state.model.history
    restored = TrainingHistory.from_dict(history.to_dict())

    assert restored == history
    assert all("seconds" not in r for r in history.to_dict(include_times=False)["records"])


@pytest.mark.unit
def test_train_reports_phases_and_writes_progress_log(tmp_path: Path) -> None:
    from src.data_processing.dataset import generate_blobs
    from src.hashing.trainer import PhaseRecord, TrainConfig, train

    data = generate_blobs(3, 20, 2, 0.1, seed=1)
    config = TrainConfig(bits=4, anchors=10, sigma=0.5, lam=1.0, gamma=1.0, max_iter=2)
    seen: list[PhaseRecord] = []
    log_path = tmp_path / "progress" / "train.log"

    result = train(data, config, progress_log=log_path, on_phase=seen.append)

    lines = log_path.read_text().splitlines()
    assert len(lines) == len(seen) == len(result.history.records)
    assert lines[0].startswith("iteration=1 phase=svm objective=")
    assert "changed=" in lines[1] and "seconds=" in lines[1]


@pytest.mark.unit
def test_train_is_deterministic_for_a_seed() -> None:
    from src.data_processing.dataset import generate_blobs
    from src.hashing.trainer import TrainConfig, train

    data = generate_blobs(3, 20, 2, 0.1, seed=2)
    config = TrainConfig(bits=4, anchors=10, lam=1.0, gamma=1.0, max_iter=2, seed=9)

    first = train(data, config)
    second = train(data, config)
    other_seed = train(data, config.with_overrides(seed=10))

    np.testing.assert_array_equal(first.model.wx, second.model.wx)
    assert first.codes == second.codes
    assert not np.array_equal(first.model.anchors.indices, other_seed.model.anchors.indices)


@pytest.mark.unit
def test_train_uses_median_sigma_when_unset() -> None:
    from src.data_processing.dataset import generate_blobs
    from src.hashing.trainer import TrainConfig, train

    data = generate_blobs(2, 15, 2, 0.1, seed=4)
    result = train(data, TrainConfig(bits=2, anchors=5, lam=1.0, gamma=1.0, max_iter=1))

    assert result.model.anchors.sigma is not None
    assert result.model.anchors.sigma > 0
