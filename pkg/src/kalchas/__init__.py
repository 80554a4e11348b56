"""Polytonic Greek OCR: CRNN with GroupNorm and CTC, trained with RMSProp."""

from .charset import Charset, load_charset, load_default_charset
from .model import build_model, default_config, load_model, save_model

__all__ = [
    "Charset",
    "load_charset",
    "load_default_charset",
    "build_model",
    "default_config",
    "load_model",
    "save_model",
]
