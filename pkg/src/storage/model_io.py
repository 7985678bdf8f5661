"""Binary model and code files.

Model file, little-endian throughout::

    header    magic "SIHM", version u32, flags u32, d u32, r u32, m u32, K u32,
              n u64, sigma f64, seed u64
    sections  preprocess mean, anchor indices, anchors, bit weights,
              class weights, class table, metadata (JSON config + history)
    state     code revisions, codes (packed), dataset labels, dataset
              features; present only when flags has FLAG_STATE

Codes file: magic "SIHC", n u64, m u32, then n rows of packed 64-bit words.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Union

import numpy as np

from src.common.exceptions import ModelFormatError
from src.common.logging import get_logger
from src.common.utils import write_bytes_atomic
from src.data_processing.dataset import Dataset, PreprocessStats
from src.data_processing.kernel_map import AnchorSet
from src.evaluation.retrieval_eval import num_words, pack_codes, unpack_codes
from src.hashing.incremental import TrainState
from src.hashing.trainer import HashModel, TrainConfig, TrainingHistory
from src.optimization.code_optimizer import CodeMatrix

logger = get_logger(__name__)

MODEL_MAGIC = b"SIHM"
MODEL_VERSION = 1
CODES_MAGIC = b"SIHC"

FLAG_STATE = 1
FLAG_WB_COLD = 2
FLAG_BIAS = 4

_MODEL_HEADER = struct.Struct("<4sIIIIIIQdQ")
_CODES_HEADER = struct.Struct("<4sQI")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")

Saved = Union[TrainState, HashModel]


def _array_bytes(values: np.ndarray, dtype: str) -> bytes:
    return np.ascontiguousarray(values, dtype=dtype).tobytes()


def _text_bytes(text: str) -> bytes:
    payload = text.encode("utf-8")
    return _U32.pack(len(payload)) + payload


def _metadata(model: HashModel) -> str:
    # no thread count and no wall times, so files match across thread counts
    return json.dumps(
        {
            "config": model.config.to_dict(include_threads=False),
            "history": model.history.to_dict(include_times=False),
        },
        sort_keys=True,
    )


def encode_model(obj: Saved) -> bytes:
    state = obj if isinstance(obj, TrainState) else None
    model = state.model if state is not None else obj
    anchors = model.anchors
    flags = FLAG_BIAS if anchors.bias else 0
    if state is not None:
        flags |= FLAG_STATE
        if state.wb_cold:
            flags |= FLAG_WB_COLD
    rows = state.dataset.n if state is not None else 0

    parts = [
        _MODEL_HEADER.pack(
            MODEL_MAGIC,
            MODEL_VERSION,
            flags,
            anchors.d,
            anchors.r,
            model.num_bits,
            model.num_classes,
            rows,
            float(anchors.sigma) if anchors.sigma is not None else 0.0,
            model.config.seed,
        ),
        _array_bytes(model.preprocess.mean, "<f8"),
        _array_bytes(anchors.indices, "<i8"),
        _array_bytes(anchors.anchors, "<f8"),
        _array_bytes(model.wx, "<f8"),
        _array_bytes(model.wb, "<f8"),
        b"".join(_text_bytes(name) for name in model.class_names),
        _text_bytes(_metadata(model)),
    ]
    if state is not None:
        parts += [
            _array_bytes(state.codes.revisions, "<i8"),
            _array_bytes(pack_codes(state.codes.values), "<u8"),
            _array_bytes(state.dataset.labels, "<i8"),
            _array_bytes(state.dataset.features, "<f8"),
        ]
    return b"".join(parts)


def save_model(obj: Saved, path: str | Path) -> None:
    """Write a model; saving a TrainState also stores codes and the training set."""
    write_bytes_atomic(path, encode_model(obj))
    logger.info(
        "Saved model",
        extra={"path": str(path), "with_state": isinstance(obj, TrainState)},
    )


class _Reader:
    def __init__(self, payload: bytes) -> None:
        self._payload = payload
        self._offset = 0

    def take(self, size: int, section: str) -> bytes:
        end = self._offset + size
        if end > len(self._payload):
            raise ModelFormatError(f"corrupt model: truncated in section '{section}'")
        chunk = self._payload[self._offset : end]
        self._offset = end
        return chunk

    def array(self, count: int, dtype: str, section: str) -> np.ndarray:
        size = np.dtype(dtype).itemsize * count
        return np.frombuffer(self.take(size, section), dtype=dtype).astype(dtype[1:]).copy()

    def text(self, section: str) -> str:
        (length,) = _U32.unpack(self.take(_U32.size, section))
        try:
            return self.take(length, section).decode("utf-8")
        except UnicodeDecodeError as e:
            raise ModelFormatError(f"corrupt model: bad text in section '{section}'") from e

    def finish(self) -> None:
        if self._offset != len(self._payload):
            raise ModelFormatError(
                f"corrupt model: {len(self._payload) - self._offset} trailing bytes"
            )


def decode_model(payload: bytes) -> Saved:
    reader = _Reader(payload)
    if len(payload) >= 8 and payload[:4] == MODEL_MAGIC:
        (version,) = _U32.unpack(payload[4:8])
        if version != MODEL_VERSION:
            raise ModelFormatError(f"unsupported model version {version}")
    elif len(payload) >= 4:
        raise ModelFormatError(f"not a model file (magic {payload[:4]!r})")
    header = reader.take(_MODEL_HEADER.size, "header")
    _, _, flags, d, r, m, k, n, sigma, _seed = _MODEL_HEADER.unpack(header)
    bias = bool(flags & FLAG_BIAS)

    mean = reader.array(d, "<f8", "preprocess mean")
    indices = reader.array(r, "<i8", "anchor indices")
    anchor_rows = reader.array(r * d, "<f8", "anchors").reshape(r, d)
    output_dim = r + (1 if bias else 0)
    wx = reader.array(output_dim * m, "<f8", "bit weights").reshape(output_dim, m)
    wb = reader.array((m + 1) * k, "<f8", "class weights").reshape(m + 1, k)
    class_names = tuple(reader.text("class table") for _ in range(k))
    try:
        metadata = json.loads(reader.text("metadata"))
        config = TrainConfig.from_dict(metadata["config"])
        history = TrainingHistory.from_dict(metadata["history"])
    except (KeyError, TypeError, ValueError) as e:
        raise ModelFormatError(f"corrupt model: bad metadata ({e})") from e

    model = HashModel(
        preprocess=PreprocessStats(mean=mean),
        anchors=AnchorSet(
            anchors=anchor_rows,
            indices=indices,
            sigma=sigma if sigma > 0 else None,
            bias=bias,
        ),
        wx=wx,
        wb=wb,
        class_names=class_names,
        config=config,
        history=history,
    )
    if not flags & FLAG_STATE:
        reader.finish()
        return model

    revisions = reader.array(m, "<i8", "code revisions")
    words = reader.array(n * num_words(m), "<u8", "codes").reshape(n, num_words(m))
    labels = reader.array(n, "<i8", "dataset labels")
    features = reader.array(n * d, "<f8", "dataset features").reshape(n, d)
    reader.finish()
    return TrainState(
        dataset=Dataset(features=features, labels=labels, class_names=class_names),
        codes=CodeMatrix(unpack_codes(words, m), revisions),
        model=model,
        wb_cold=bool(flags & FLAG_WB_COLD),
    )


def load_model(path: str | Path) -> Saved:
    path = Path(path)
    if not path.exists():
        raise ModelFormatError(f"model file not found: {path}")
    try:
        return decode_model(path.read_bytes())
    except ModelFormatError as e:
        raise ModelFormatError(f"{path}: {e}") from e


def load_state(path: str | Path) -> TrainState:
    saved = load_model(path)
    if not isinstance(saved, TrainState):
        raise ModelFormatError(f"{path}: model file holds no training state")
    return saved


def save_codes(codes: np.ndarray, path: str | Path) -> None:
    codes = np.atleast_2d(np.asarray(codes))
    n, m = codes.shape
    header = _CODES_HEADER.pack(CODES_MAGIC, n, m)
    write_bytes_atomic(path, header + _array_bytes(pack_codes(codes), "<u8"))


def load_codes(path: str | Path) -> np.ndarray:
    """Codes as an n x m matrix of -1/+1."""
    path = Path(path)
    if not path.exists():
        raise ModelFormatError(f"codes file not found: {path}")
    payload = path.read_bytes()
    if len(payload) < _CODES_HEADER.size:
        raise ModelFormatError(f"{path}: truncated codes header")
    magic, n, m = _CODES_HEADER.unpack_from(payload, 0)
    if magic != CODES_MAGIC:
        raise ModelFormatError(f"{path}: not a codes file (magic {magic!r})")
    if m < 1:
        raise ModelFormatError(f"{path}: code length must be positive")
    expected = _CODES_HEADER.size + 8 * n * num_words(m)
    if len(payload) != expected:
        raise ModelFormatError(
            f"{path}: codes file has {len(payload)} bytes, header implies {expected}"
        )
    words = np.frombuffer(payload, dtype="<u8", offset=_CODES_HEADER.size).reshape(
        n, num_words(m)
    )
    return unpack_codes(words.astype(np.uint64), m)
