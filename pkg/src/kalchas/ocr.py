"""String-keyed model registry facade.

    from kalchas.ocr import list_available_models, load_ocr_model
    models = list_available_models()
    model = load_ocr_model(models[0])
    text, confidence = model.ocr([line_image])[0]

The registry directory defaults to $KALCHAS_REGISTRY or ~/.kalchas/models.
"""

from __future__ import annotations

import os
from pathlib import Path

from . import model as _model


def default_registry_dir() -> Path:
    env = os.environ.get("KALCHAS_REGISTRY")
    if env:
        return Path(env)
    return Path.home() / ".kalchas" / "models"


def list_available_models(registry_dir=None) -> list[str]:
    registry = Path(registry_dir) if registry_dir else default_registry_dir()
    if not registry.is_dir():
        return []
    return _model.list_available_models(registry)


def load_ocr_model(name: str, registry_dir=None) -> _model.CrnnModel:
    registry = Path(registry_dir) if registry_dir else default_registry_dir()
    return _model.load_ocr_model(name, registry)
