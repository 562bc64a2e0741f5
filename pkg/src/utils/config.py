"""JSON config files and run manifests.

A config file holds the same keys as the command-line long flags (dashes or
underscores). A manifest written by an earlier run is a valid config: its
``config`` block is used.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional

import numpy as np

from src.utils.errors import ConfigurationError

log = logging.getLogger(__name__)
log.addHandler(logging.NullHandler())

SCHEMA_VERSION = 1
TOOL_VERSION = "0.1.0"
MANIFEST_SUFFIX = ".manifest.json"


def _normalize_keys(values: dict) -> dict:
    return {str(key).replace("-", "_"): value for key, value in values.items()}


def load_config(path: str | Path) -> dict[str, Any]:
    """Read a JSON config (or manifest) into flag-name keys."""
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as f:
            values = json.load(f)
    except FileNotFoundError as exc:
        raise ConfigurationError(f"config file {path} does not exist") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(values, dict):
        raise ConfigurationError(f"config file {path} must hold a JSON object")

    if "schema_version" in values and "config" in values:
        if values["schema_version"] != SCHEMA_VERSION:
            raise ConfigurationError(
                f"manifest {path} has schema_version {values['schema_version']}, expected {SCHEMA_VERSION}"
            )
        values = values["config"]
        log.info("Loaded config block of manifest %s", path)
    return _normalize_keys(values)


def jsonable(value: Any) -> Any:
    """Convert paths, tuples and numpy scalars into plain JSON values."""
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return str(value)
    return value


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def manifest_path(artifact: str | Path) -> Path:
    artifact = Path(artifact)
    return artifact.with_name(artifact.name + MANIFEST_SUFFIX)


@dataclass
class RunManifest:
    subcommand: str
    config: dict
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    seed: Optional[int] = None
    tool_version: str = TOOL_VERSION
    started_at: str = field(default_factory=_now)
    finished_at: Optional[str] = None
    schema_version: int = SCHEMA_VERSION

    def finish(self) -> "RunManifest":
        self.finished_at = _now()
        return self

    def to_dict(self) -> dict:
        return jsonable(asdict(self))

    def write(self, artifact: str | Path) -> Path:
        """Write ``<artifact>.manifest.json`` next to the artifact."""
        path = manifest_path(artifact)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)
        return path

    @classmethod
    def read(cls, path: str | Path) -> "RunManifest":
        with Path(path).open("r", encoding="utf-8") as f:
            values = json.load(f)
        if values.get("schema_version") != SCHEMA_VERSION:
            raise ConfigurationError(f"{path}: unsupported manifest schema {values.get('schema_version')}")
        return cls(**values)
