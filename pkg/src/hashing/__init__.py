from src.hashing.incremental import (
    AddClasses,
    AddImages,
    DeleteClasses,
    ModificationEvent,
    Strategy,
    TrainState,
    apply_event,
    apply_events,
    incremental_train,
    most_frequent_pattern,
    parse_event_file,
    update,
)
from src.hashing.trainer import (
    HashModel,
    PhaseRecord,
    TrainConfig,
    TrainingHistory,
    TrainResult,
    encode,
    encode_batch,
    init_codes,
    sample_codewords,
    total_objective,
    train,
)

__all__ = [
    "TrainConfig",
    "HashModel",
    "PhaseRecord",
    "TrainingHistory",
    "TrainResult",
    "init_codes",
    "sample_codewords",
    "total_objective",
    "train",
    "encode",
    "encode_batch",
    "AddClasses",
    "AddImages",
    "DeleteClasses",
    "ModificationEvent",
    "Strategy",
    "TrainState",
    "most_frequent_pattern",
    "apply_event",
    "apply_events",
    "incremental_train",
    "update",
    "parse_event_file",
]
