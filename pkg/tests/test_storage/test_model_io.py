from __future__ import annotations

import struct
from collections.abc import Callable
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import pytest

if TYPE_CHECKING:
    from src.hashing.incremental import TrainState


@pytest.mark.unit
def test_state_round_trip_is_exact(trained_state: TrainState, tmp_path: Path) -> None:
    from src.hashing.incremental import TrainState
    from src.storage.model_io import encode_model, load_model, save_model

    path = tmp_path / "models" / "state.sihm"
    save_model(trained_state, path)
    loaded = load_model(path)

    assert isinstance(loaded, TrainState)
    model, original = loaded.model, trained_state.model
    np.testing.assert_array_equal(model.wx, original.wx)
    np.testing.assert_array_equal(model.wb, original.wb)
    np.testing.assert_array_equal(model.preprocess.mean, original.preprocess.mean)
    np.testing.assert_array_equal(model.anchors.anchors, original.anchors.anchors)
    np.testing.assert_array_equal(model.anchors.indices, original.anchors.indices)
    assert model.anchors.sigma == original.anchors.sigma
    assert model.class_names == original.class_names
    assert model.config == original.config
    assert model.history.objectives == original.history.objectives
    assert loaded.codes == trained_state.codes
    np.testing.assert_array_equal(loaded.codes.revisions, trained_state.codes.revisions)
    np.testing.assert_array_equal(loaded.dataset.features, trained_state.dataset.features)
    np.testing.assert_array_equal(loaded.dataset.labels, trained_state.dataset.labels)
    assert loaded.wb_cold == trained_state.wb_cold
    assert encode_model(loaded) == path.read_bytes()


@pytest.mark.unit
def test_model_without_state(trained_state: TrainState, tmp_path: Path) -> None:
    from src.hashing.trainer import HashModel, encode_batch
    from src.storage.model_io import load_model, save_model

    path = tmp_path / "model.sihm"
    save_model(trained_state.model, path)
    loaded = load_model(path)

    assert isinstance(loaded, HashModel)
    features = trained_state.dataset.features
    np.testing.assert_array_equal(
        encode_batch(loaded, features), encode_batch(trained_state.model, features)
    )


@pytest.mark.unit
def test_wb_cold_flag_survives(trained_state: TrainState, tmp_path: Path) -> None:
    from dataclasses import replace

    from src.storage.model_io import load_state, save_model

    path = tmp_path / "cold.sihm"
    save_model(replace(trained_state, wb_cold=True), path)

    assert load_state(path).wb_cold


@pytest.mark.unit
def test_file_layout_header(trained_state: TrainState) -> None:
    from src.storage.model_io import MODEL_MAGIC, MODEL_VERSION, encode_model

    payload = encode_model(trained_state)
    magic, version, flags, d, r, m, k, n = struct.unpack_from("<4sIIIIIIQ", payload, 0)

    assert magic == MODEL_MAGIC
    assert version == MODEL_VERSION
    assert flags & 1
    assert (d, r, m, k, n) == (2, 24, 8, 4, trained_state.dataset.n)


@pytest.mark.unit
@pytest.mark.parametrize(
    ("mutate", "message"),
    [
        (lambda p: p[:-1], "truncated in section 'dataset features'"),
        (lambda p: p[:20], "truncated in section 'header'"),
        (lambda p: p + b"\x00", "1 trailing bytes"),
        (lambda p: b"NOPE" + p[4:], "not a model file"),
        (lambda p: p[:4] + struct.pack("<I", 2) + p[8:], "unsupported model version 2"),
    ],
)
def test_corrupt_model_files(
    trained_state: TrainState,
    tmp_path: Path,
    mutate: Callable[[bytes], bytes],
    message: str,
) -> None:
    from src.common.exceptions import ModelFormatError
    from src.storage.model_io import encode_model, load_model

    path = tmp_path / "bad.sihm"
    path.write_bytes(mutate(encode_model(trained_state)))

    with pytest.raises(ModelFormatError, match=message):
        load_model(path)


@pytest.mark.unit
def test_truncated_plain_model_names_section(trained_state: TrainState) -> None:
    from src.common.exceptions import ModelFormatError
    from src.storage.model_io import decode_model, encode_model

    payload = encode_model(trained_state.model)

    with pytest.raises(ModelFormatError, match="'metadata'"):
        decode_model(payload[:-3])


@pytest.mark.unit
def test_load_errors(trained_state: TrainState, tmp_path: Path) -> None:
    from src.common.exceptions import ModelFormatError
    from src.storage.model_io import load_model, load_state, save_model

    with pytest.raises(ModelFormatError, match="model file not found"):
        load_model(tmp_path / "missing.sihm")

    path = tmp_path / "plain.sihm"
    save_model(trained_state.model, path)
    with pytest.raises(ModelFormatError, match="no training state"):
        load_state(path)


@pytest.mark.unit
@pytest.mark.parametrize("m", [3, 64, 100])
def test_codes_round_trip(m: int, tmp_path: Path, rng: np.random.Generator) -> None:
    from src.storage.model_io import load_codes, save_codes

    codes = np.where(rng.random((9, m)) < 0.5, -1, 1).astype(np.int8)
    path = tmp_path / "codes.sihc"
    save_codes(codes, path)

    loaded = load_codes(path)
    np.testing.assert_array_equal(loaded, codes)
    assert loaded.dtype == np.int8
    assert path.stat().st_size == 16 + 8 * 9 * (-(-m // 64))


@pytest.mark.unit
def test_codes_file_errors(tmp_path: Path) -> None:
    from src.common.exceptions import ModelFormatError
    from src.storage.model_io import load_codes, save_codes

    path = tmp_path / "codes.sihc"
    save_codes(np.ones((2, 5)), path)
    payload = path.read_bytes()

    path.write_bytes(payload[:-1])
    with pytest.raises(ModelFormatError, match="header implies"):
        load_codes(path)

    path.write_bytes(b"SIHM" + payload[4:])
    with pytest.raises(ModelFormatError, match="not a codes file"):
        load_codes(path)

    path.write_bytes(payload[:6])
    with pytest.raises(ModelFormatError, match="truncated codes header"):
        load_codes(path)

    with pytest.raises(ModelFormatError, match="codes file not found"):
        load_codes(tmp_path / "missing.sihc")
