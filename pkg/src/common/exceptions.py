from __future__ import annotations


class SIHashError(Exception):
    pass


class ConfigurationError(SIHashError):
    pass


class ValidationError(SIHashError):
    pass


class DatasetError(SIHashError):
    def __init__(self, message: str, line: int | None = None) -> None:
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class KernelMapError(SIHashError):
    pass


class SolverError(SIHashError):
    pass


class TrainingError(SIHashError):
    pass


class IncrementalUpdateError(SIHashError):
    pass


class ModelFormatError(SIHashError):
    pass
