"""Pydantic request/response models for the HTTP API."""

from __future__ import annotations

from pydantic import BaseModel, Field


class Box(BaseModel):
    x: int = Field(ge=0)
    y: int = Field(ge=0)
    width: int = Field(ge=1)
    height: int = Field(ge=1)


class DocumentOut(BaseModel):
    document_id: str
    filename: str
    media_type: str
    n_pages: int
    page_ids: list[str]
    created_at: str


class PageOut(BaseModel):
    id: str
    document_id: str
    index: int
    width: int
    height: int
    line_ids: list[str]


class LineOut(BaseModel):
    id: str
    page_id: str
    box: Box
    status: str
    ocr_text: str | None = None
    ocr_confidence: float | None = None
    corrected_text: str | None = None
    charset_ok: bool | None = None
    bad_chars: list[str] = []


class SegmentRequest(BaseModel):
    min_gap: int = Field(default=3, ge=1)
    min_height: int = Field(default=8, ge=1)
    deskew: bool = False
    force: bool = False


class OcrRequest(BaseModel):
    model: str | None = None


class OcrOut(BaseModel):
    text: str
    confidence: float


class TextRequest(BaseModel):
    text: str


class FinetuneRequest(BaseModel):
    base_model: str
    documents: list[str] | None = None
    epochs: int = Field(default=30, ge=1)
    batch_size: int = Field(default=4, ge=1)
    learning_rate: float = Field(default=1e-3, gt=0)
    seed: int = 0
    eval_every: int = Field(default=5, ge=1)


class CurvePointOut(BaseModel):
    epoch: int
    train_loss: float
    val_loss: float
    train_cer: float
    val_cer: float


class JobOut(BaseModel):
    id: str
    kind: str
    status: str
    progress_epoch: int = 0
    progress_total: int = 0
    curve: list[CurvePointOut] = []
    result_model: str | None = None
    error: str | None = None
    created_at: str
    finished_at: str | None = None


class ModelOut(BaseModel):
    name: str
    charset_size: int
    provenance: dict = {}
