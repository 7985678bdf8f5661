from __future__ import annotations

from pathlib import Path
from typing import Any

import jsonschema

from src.common.exceptions import ConfigurationError
from src.common.utils import load_json

THREADS_ENV_VAR = "SIH_THREADS"
SCHEMA_DIR = Path(__file__).resolve().parents[2] / "config" / "schemas"


class ConfigLoader:
    """Loads JSON configuration files, validating against ``schemas/<name>.schema.json``."""

    def __init__(
        self,
        config_dir: str | Path = "config",
        schema_dir: str | Path | None = None,
    ) -> None:
        self._config_dir = Path(config_dir)
        self._schema_dir = (
            Path(schema_dir) if schema_dir is not None else self._config_dir / "schemas"
        )
        self._cache: dict[str, dict[str, Any]] = {}

    @property
    def config_dir(self) -> Path:
        return self._config_dir

    def load(
        self,
        filename: str | Path,
        schema_name: str | None = None,
        use_cache: bool = True,
    ) -> dict[str, Any]:
        key = str(filename)
        if use_cache and key in self._cache:
            return self._cache[key]

        path = Path(filename)
        if not path.is_absolute() and not path.exists():
            path = self._config_dir / path
        if not path.exists():
            raise ConfigurationError(f"Configuration file not found: {path}")

        try:
            data = load_json(path)
        except Exception as e:
            raise ConfigurationError(f"Failed to load {path}: {e}") from e

        if schema_name is not None:
            self.validate(data, schema_name)

        if use_cache:
            self._cache[key] = data

        return data

    def load_schema(self, schema_name: str) -> dict[str, Any]:
        path = self._schema_dir / f"{schema_name}.schema.json"
        if not path.exists():
            raise ConfigurationError(f"Schema file not found: {path}")
        return load_json(path)

    def validate(self, data: dict[str, Any], schema_name: str) -> None:
        schema = self.load_schema(schema_name)
        try:
            jsonschema.validate(data, schema)
        except jsonschema.ValidationError as e:
            raise ConfigurationError(
                f"Configuration '{schema_name}' validation failed: {e.message}"
            ) from e
        except jsonschema.SchemaError as e:
            raise ConfigurationError(
                f"Invalid schema for '{schema_name}': {e.message}"
            ) from e

