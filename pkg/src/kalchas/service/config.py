"""Service configuration: a JSON file plus environment overrides."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class ServiceConfig:
    store_dir: Path
    registry_dir: Path
    port: int = 8000
    default_model: str | None = None
    token: str | None = None
    upload_limit_mb: int = 100
    # Optional manifest concatenated with exported labels during fine-tune.
    extra_finetune_manifest: Path | None = None

    def __post_init__(self):
        self.store_dir = Path(self.store_dir)
        self.registry_dir = Path(self.registry_dir)
        if self.extra_finetune_manifest is not None:
            self.extra_finetune_manifest = Path(self.extra_finetune_manifest)
        if self.port < 1 or self.port > 65535:
            raise ConfigError(f"port {self.port} out of range")
        if self.upload_limit_mb < 1:
            raise ConfigError("upload_limit_mb must be >= 1")


_ENV_KEYS = {
    "KALCHAS_STORE_DIR": ("store_dir", str),
    "KALCHAS_REGISTRY_DIR": ("registry_dir", str),
    "KALCHAS_PORT": ("port", int),
    "KALCHAS_DEFAULT_MODEL": ("default_model", str),
    "KALCHAS_TOKEN": ("token", str),
    "KALCHAS_UPLOAD_LIMIT_MB": ("upload_limit_mb", int),
}

_FIELDS = {
    "store_dir": str,
    "registry_dir": str,
    "port": int,
    "default_model": str,
    "token": str,
    "upload_limit_mb": int,
    "extra_finetune_manifest": str,
}


def load_config(path=None, env=os.environ) -> ServiceConfig:
    """Read the JSON config file, then apply environment overrides."""
    values: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text("utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
        for key, value in raw.items():
            if key not in _FIELDS:
                raise ConfigError(f"unknown config field {key!r}")
            try:
                values[key] = _FIELDS[key](value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"config field {key!r}: {exc}") from exc
    for env_key, (field_name, cast) in _ENV_KEYS.items():
        if env_key in env:
            try:
                values[field_name] = cast(env[env_key])
            except ValueError as exc:
                raise ConfigError(f"{env_key}: {exc}") from exc
    missing = {"store_dir", "registry_dir"} - values.keys()
    if missing:
        raise ConfigError(f"missing required config fields: {sorted(missing)}")
    return ServiceConfig(**values)
