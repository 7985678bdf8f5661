from src.common.config import ConfigLoader
from src.common.exceptions import (
    ConfigurationError,
    DatasetError,
    IncrementalUpdateError,
    KernelMapError,
    ModelFormatError,
    SIHashError,
    SolverError,
    TrainingError,
    ValidationError,
)
from src.common.logging import get_logger, setup_logging
from src.common.utils import (
    ensure_directory,
    load_json,
    save_json,
    spawn_rngs,
    write_bytes_atomic,
)

__all__ = [
    "get_logger",
    "setup_logging",
    "SIHashError",
    "ConfigurationError",
    "ValidationError",
    "DatasetError",
    "KernelMapError",
    "SolverError",
    "TrainingError",
    "IncrementalUpdateError",
    "ModelFormatError",
    "load_json",
    "save_json",
    "write_bytes_atomic",
    "ensure_directory",
    "spawn_rngs",
    "ConfigLoader",
]
