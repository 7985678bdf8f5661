"""Database modification events and warm-started retraining.

A :class:`TrainState` bundles the current training set with its code matrix
and model. :func:`apply_event` edits the state for one modification and
:func:`incremental_train` resumes the alternating optimization from it.
Anchors and the preprocessing mean stay fixed unless a re-anchor is requested,
so the bit SVM weights remain valid warm starts.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Union

import numpy as np

from src.common.exceptions import DatasetError, IncrementalUpdateError
from src.common.logging import get_logger
from src.common.utils import spawn_rngs
from src.data_processing.dataset import Dataset, apply_preprocessor, load_dataset
from src.data_processing.kernel_map import embed_batch
from src.hashing.trainer import (
    HashModel,
    TrainConfig,
    TrainResult,
    open_progress_log,
    prepare_features,
    run_alternation,
    sample_codewords,
    train,
)
from src.optimization.code_optimizer import CodeMatrix

logger = get_logger(__name__)


@dataclass(frozen=True, eq=False)
class AddClasses:
    data: Dataset


@dataclass(frozen=True, eq=False)
class AddImages:
    data: Dataset | None = None


@dataclass(frozen=True)
class DeleteClasses:
    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "labels", tuple(str(label) for label in self.labels))


ModificationEvent = Union[AddClasses, AddImages, DeleteClasses]


class Strategy(Enum):
    PASSIVE = "passive"
    SCRATCH = "scratch"
    INCREMENTAL = "incremental"


@dataclass(frozen=True, eq=False)
class TrainState:
    dataset: Dataset
    codes: CodeMatrix
    model: HashModel
    wb_cold: bool = False

    def __post_init__(self) -> None:
        if self.dataset.n != self.codes.n:
            raise IncrementalUpdateError(
                f"dataset has {self.dataset.n} rows but code matrix has {self.codes.n}"
            )
        if self.codes.m != self.model.num_bits:
            raise IncrementalUpdateError(
                f"code matrix has {self.codes.m} bits but model has {self.model.num_bits}"
            )
        if self.dataset.class_names != self.model.class_names:
            raise IncrementalUpdateError("dataset and model class tables differ")

    @classmethod
    def from_result(cls, dataset: Dataset, result: TrainResult) -> TrainState:
        return cls(dataset=dataset, codes=result.codes, model=result.model)


def most_frequent_pattern(rows: np.ndarray) -> np.ndarray:
    """Modal row; ties go to the pattern seen first."""
    rows = np.atleast_2d(np.asarray(rows))
    if rows.shape[0] == 0:
        raise IncrementalUpdateError("no code rows to take a pattern from")
    counts = Counter(tuple(int(v) for v in row) for row in rows)
    pattern, _ = counts.most_common(1)[0]
    return np.asarray(pattern, dtype=np.int8)


def _check_width(state: TrainState, data: Dataset) -> None:
    if data.d != state.dataset.d:
        raise IncrementalUpdateError(
            f"new samples have {data.d} features, the database has {state.dataset.d}"
        )


def _delete_classes(state: TrainState, event: DeleteClasses) -> TrainState:
    existing = set(state.dataset.class_names)
    unknown = sorted(set(event.labels) - existing)
    if unknown:
        raise IncrementalUpdateError(f"cannot delete unknown classes: {', '.join(unknown)}")
    removed = set(event.labels)
    if removed == existing:
        raise IncrementalUpdateError("cannot delete every class")

    removed_ids = [state.dataset.class_id(name) for name in sorted(removed)]
    keep_rows = ~np.isin(state.dataset.labels, removed_ids)
    keep_columns = [k for k, name in enumerate(state.dataset.class_names) if name not in removed]
    dataset = state.dataset.subset(keep_rows)
    model = replace(
        state.model,
        wb=state.model.wb[:, keep_columns],
        class_names=dataset.class_names,
    )
    return TrainState(
        dataset=dataset,
        codes=state.codes.rows(keep_rows),
        model=model,
        wb_cold=state.wb_cold,
    )


def _add_images(state: TrainState, event: AddImages) -> TrainState:
    if event.data is None:
        return state
    _check_width(state, event.data)
    unknown = sorted(set(event.data.class_names) - set(state.dataset.class_names))
    if unknown:
        raise IncrementalUpdateError(
            f"add-images refers to classes not in the database: {', '.join(unknown)}"
        )

    patterns = {
        name: most_frequent_pattern(state.codes.values[state.dataset.labels == k])
        for k, name in enumerate(state.dataset.class_names)
    }
    rows = np.stack([patterns[name] for name in event.data.raw_labels])
    return TrainState(
        dataset=state.dataset.concat(event.data),
        codes=state.codes.append_rows(rows),
        model=state.model,
        wb_cold=state.wb_cold,
    )


def _add_classes(state: TrainState, event: AddClasses, seed: int) -> TrainState:
    _check_width(state, event.data)
    clashing = sorted(set(event.data.class_names) & set(state.dataset.class_names))
    if clashing:
        raise IncrementalUpdateError(
            f"add-class introduces classes already in the database: {', '.join(clashing)}"
        )

    m = state.codes.m
    existing = np.unique(state.codes.values, axis=0)
    (rng,) = spawn_rngs(seed, 1)
    book = sample_codewords(event.data.num_classes, m, state.model.config.gamma, rng, existing)
    dataset = state.dataset.concat(event.data)
    model = replace(
        state.model,
        wb=np.zeros((m + 1, dataset.num_classes)),
        class_names=dataset.class_names,
    )
    logger.info(
        "New classes get fresh codewords, class weights will be retrained from zero",
        extra={"classes": list(event.data.class_names)},
    )
    return TrainState(
        dataset=dataset,
        codes=state.codes.append_rows(book[event.data.labels]),
        model=model,
        wb_cold=True,
    )


def apply_event(state: TrainState, event: ModificationEvent, seed: int = 0) -> TrainState:
    if isinstance(event, DeleteClasses):
        updated = _delete_classes(state, event)
    elif isinstance(event, AddImages):
        updated = _add_images(state, event)
    elif isinstance(event, AddClasses):
        updated = _add_classes(state, event, seed)
    else:
        raise IncrementalUpdateError(f"unsupported event: {event!r}")
    logger.info(
        "Applied modification",
        extra={
            "event": type(event).__name__,
            "rows": updated.dataset.n,
            "classes": updated.dataset.num_classes,
        },
    )
    return updated


def apply_events(
    state: TrainState, events: list[ModificationEvent], seed: int = 0
) -> TrainState:
    if not events:
        return state
    for event, event_seed in zip(events, np.random.SeedSequence(seed).generate_state(len(events))):
        state = apply_event(state, event, int(event_seed))
    return state


def incremental_train(
    state: TrainState,
    config: TrainConfig,
    re_anchor: bool = False,
    refit_preprocessing: bool = False,
    progress_log: str | Path | None = None,
) -> TrainResult:
    """Resume training from ``state`` with warm-started SVMs.

    Refitting the preprocessing mean implies re-anchoring. Either one changes
    the feature map, so the bit SVMs then start from zero.
    """
    if config.bits != state.codes.m:
        raise IncrementalUpdateError(
            f"config asks for {config.bits} bits but the state has {state.codes.m}"
        )
    dataset = state.dataset
    model = state.model
    re_anchor = re_anchor or refit_preprocessing

    if re_anchor:
        preprocess, anchors, phi = prepare_features(dataset, config)
        wx0 = np.zeros((anchors.output_dim, config.bits))
    else:
        preprocess, anchors = model.preprocess, model.anchors
        phi = embed_batch(apply_preprocessor(preprocess, dataset.features), anchors, config.threads)
        wx0 = np.array(model.wx)

    progress = open_progress_log(progress_log)
    try:
        codes, wx, wb, history = run_alternation(
            phi,
            dataset.labels,
            dataset.num_classes,
            state.codes,
            wx0,
            model.wb,
            wb_cold=state.wb_cold,
            config=config,
            progress=progress,
        )
    finally:
        if progress is not None:
            progress.close()

    updated = HashModel(
        preprocess=preprocess,
        anchors=anchors,
        wx=wx,
        wb=wb,
        class_names=dataset.class_names,
        config=config,
        history=history,
    )
    return TrainResult(model=updated, codes=codes, history=history)


def update(
    state: TrainState,
    events: list[ModificationEvent],
    strategy: Strategy | str,
    config: TrainConfig | None = None,
    re_anchor: bool = False,
    refit_preprocessing: bool = False,
) -> TrainState:
    """Bring ``state`` up to date with ``events`` using one of three strategies.

    passive keeps the old model, scratch retrains on the final data with
    seed + 1, incremental applies the events and resumes from warm weights.
    """
    strategy = Strategy(strategy)
    config = config or state.model.config
    if strategy is Strategy.PASSIVE:
        return state

    modified = apply_events(state, events, config.seed)
    if strategy is Strategy.SCRATCH:
        result = train(modified.dataset, replace(config, seed=config.seed + 1))
    else:
        result = incremental_train(modified, config, re_anchor, refit_preprocessing)
    return TrainState.from_result(modified.dataset, result)


_COMMANDS = ("add-class", "add-images", "delete-class")


def parse_event_file(path: str | Path) -> list[ModificationEvent]:
    """Read ``add-class FILE``, ``add-images FILE`` and ``delete-class L1,L2`` lines.

    Blank lines and ``#`` comments are skipped; dataset paths are relative to
    the event file.
    """
    path = Path(path)
    if not path.exists():
        raise IncrementalUpdateError(f"event file not found: {path}")
    events: list[ModificationEvent] = []
    with open(path, encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            command, _, argument = line.partition(" ")
            argument = argument.strip()
            if command not in _COMMANDS:
                raise IncrementalUpdateError(f"line {line_no}: unknown command {command!r}")
            if not argument:
                raise IncrementalUpdateError(f"line {line_no}: {command} needs an argument")

            if command == "delete-class":
                labels = tuple(label.strip() for label in argument.split(",") if label.strip())
                events.append(DeleteClasses(labels))
                continue

            data_path = Path(argument)
            if not data_path.is_absolute():
                data_path = path.parent / data_path
            try:
                data = load_dataset(data_path)
            except DatasetError as e:
                raise IncrementalUpdateError(f"line {line_no}: {e}") from e
            events.append(AddClasses(data) if command == "add-class" else AddImages(data))
    return events
