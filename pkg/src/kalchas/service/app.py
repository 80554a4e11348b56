"""FastAPI application implementing the document -> lines -> labels workflow:
upload, segmentation, OCR, correction, export, and fine-tune jobs."""

from __future__ import annotations

import io
import json
import threading
import zipfile
from contextlib import asynccontextmanager
from pathlib import Path

import numpy as np
from fastapi import Depends, FastAPI, Header, HTTPException, UploadFile
from fastapi.responses import FileResponse, Response

from .. import imaging
from ..charset import load_default_charset, normalize_text
from ..model import (
    ModelFormatError,
    list_available_models,
    load_ocr_model,
    read_model_header,
)
from . import pdf, schemas
from .config import ServiceConfig
from .jobs import JobAlreadyRunning, JobRunner
from .store import NotFound, Store, new_id, now_rfc3339

MAGIC_TYPES = (
    (b"\x89PNG", "image/png"),
    (b"\xff\xd8", "image/jpeg"),
    (b"II*\x00", "image/tiff"),
    (b"MM\x00*", "image/tiff"),
    (b"%PDF", "application/pdf"),
)


def sniff_media_type(payload: bytes) -> str | None:
    for magic, media in MAGIC_TYPES:
        if payload.startswith(magic):
            return media
    return None


class ModelCache:
    """Loaded models keyed by (name, mtime); safe for concurrent readers."""

    def __init__(self, registry_dir: Path):
        self.registry_dir = Path(registry_dir)
        self._lock = threading.Lock()
        self._cache: dict[str, tuple[float, object]] = {}

    def get(self, name: str):
        path = self.registry_dir / f"{name}.klch"
        if not path.is_file():
            raise FileNotFoundError(name)
        mtime = path.stat().st_mtime
        with self._lock:
            hit = self._cache.get(name)
            if hit and hit[0] == mtime:
                return hit[1]
        model = load_ocr_model(name, self.registry_dir).astype(np.float32)
        with self._lock:
            self._cache[name] = (mtime, model)
        return model


def create_app(config: ServiceConfig) -> FastAPI:
    config.store_dir.mkdir(parents=True, exist_ok=True)
    config.registry_dir.mkdir(parents=True, exist_ok=True)
    store = Store(config.store_dir)
    models = ModelCache(config.registry_dir)
    runner = JobRunner(store, config.registry_dir, config.extra_finetune_manifest)
    fallback_charset = load_default_charset()

    @asynccontextmanager
    async def lifespan(app):
        yield
        # Graceful shutdown: let the training job reach its next checkpoint.
        runner.wait(timeout=60)
        store.compact()

    app = FastAPI(title="kalchas-ocr", lifespan=lifespan)
    app.state.store = store
    app.state.runner = runner

    # ------------------------------------------------------------- helpers

    def require_auth(authorization: str | None = Header(default=None)):
        if config.token is None:
            return
        if authorization != f"Bearer {config.token}":
            raise HTTPException(401, "missing or invalid bearer token")

    auth = Depends(require_auth)

    def get_or_404(collection: str, record_id: str) -> dict:
        try:
            return store.get(collection, record_id)
        except NotFound:
            raise HTTPException(404, f"{collection[:-1]} {record_id} not found")

    def default_model_name() -> str | None:
        if config.default_model:
            return config.default_model
        names = list_available_models(config.registry_dir)
        return names[0] if names else None

    def resolve_model(name: str | None):
        name = name or default_model_name()
        if name is None:
            raise HTTPException(422, "no model available; registry is empty")
        try:
            return name, models.get(name)
        except FileNotFoundError:
            available = list_available_models(config.registry_dir)
            raise HTTPException(422, f"unknown model {name!r}; available: {available}")

    def active_charset():
        name = default_model_name()
        if name is not None:
            try:
                return models.get(name).charset
            except (FileNotFoundError, ModelFormatError):
                pass
        return fallback_charset

    def line_out(line: dict) -> schemas.LineOut:
        return schemas.LineOut(**line)

    def charset_check(text: str) -> tuple[bool, list[str]]:
        cs = active_charset()
        bad = sorted({ch for ch in text if ch not in cs})
        return not bad, bad

    def exportable_lines(document_ids: list[str] | None):
        """Corrected lines eligible for training export, with exclusions."""
        docs = store.all("documents")
        if document_ids is not None:
            wanted = set(document_ids)
            docs = [d for d in docs if d["id"] in wanted]
        good, excluded = [], []
        for doc in sorted(docs, key=lambda d: d["created_at"]):
            for page_id in doc["page_ids"]:
                page = store.get("pages", page_id)
                for lid in page["line_ids"]:
                    line = store.get("lines", lid)
                    if line["status"] != "corrected":
                        continue
                    if not line["corrected_text"]:
                        excluded.append({"line_id": lid, "reason": "empty transcript"})
                    elif line.get("charset_ok") is False:
                        excluded.append(
                            {
                                "line_id": lid,
                                "reason": "out-of-charset characters",
                                "bad_chars": line.get("bad_chars", []),
                            }
                        )
                    else:
                        good.append(line)
        return good, excluded

    # ----------------------------------------------------------- documents

    @app.post("/api/documents", dependencies=[auth])
    async def upload_document(file: UploadFile) -> schemas.DocumentOut:
        payload = await file.read()
        if len(payload) > config.upload_limit_mb * 1024 * 1024:
            raise HTTPException(413, f"file exceeds {config.upload_limit_mb} MB limit")
        media = sniff_media_type(payload)
        if media is None:
            raise HTTPException(415, "unsupported media type; need PNG, JPEG, TIFF, or PDF")
        if media == "application/pdf":
            try:
                page_images = pdf.extract_page_images(payload)
            except pdf.PdfError as exc:
                raise HTTPException(415, str(exc))
            if not page_images:
                raise HTTPException(
                    422,
                    "PDF contains no extractable raster page images "
                    "(vector-only PDFs are not supported)",
                )
        else:
            from PIL import Image

            try:
                with Image.open(io.BytesIO(payload)) as im:
                    page_images = [imaging.load_page_array(im)]
            except OSError as exc:
                raise HTTPException(415, f"cannot decode image: {exc}")

        doc_id = new_id()
        page_ids = []
        for index, image in enumerate(page_images):
            digest = store.put_image(image)
            page = {
                "id": new_id(),
                "document_id": doc_id,
                "index": index,
                "image": digest,
                "width": int(image.shape[1]),
                "height": int(image.shape[0]),
                "line_ids": [],
            }
            store.put("pages", page)
            page_ids.append(page["id"])
        doc = {
            "id": doc_id,
            "filename": file.filename or "upload",
            "media_type": media,
            "page_ids": page_ids,
            "created_at": now_rfc3339(),
        }
        store.put("documents", doc)
        return _doc_out(doc)

    def _doc_out(doc: dict) -> schemas.DocumentOut:
        return schemas.DocumentOut(
            document_id=doc["id"],
            filename=doc["filename"],
            media_type=doc["media_type"],
            n_pages=len(doc["page_ids"]),
            page_ids=doc["page_ids"],
            created_at=doc["created_at"],
        )

    @app.get("/api/documents")
    def list_documents() -> list[schemas.DocumentOut]:
        docs = sorted(store.all("documents"), key=lambda d: d["created_at"])
        return [_doc_out(d) for d in docs]

    @app.get("/api/documents/{doc_id}")
    def get_document(doc_id: str) -> schemas.DocumentOut:
        return _doc_out(get_or_404("documents", doc_id))

    # --------------------------------------------------------------- pages

    @app.get("/api/pages/{page_id}")
    def get_page(page_id: str) -> schemas.PageOut:
        return schemas.PageOut(**get_or_404("pages", page_id))

    @app.get("/api/pages/{page_id}/image")
    def get_page_image(page_id: str):
        page = get_or_404("pages", page_id)
        return FileResponse(store.blob_path(page["image"]), media_type="image/png")

    @app.get("/api/pages/{page_id}/lines")
    def get_page_lines(page_id: str) -> list[schemas.LineOut]:
        get_or_404("pages", page_id)
        return [line_out(l) for l in store.lines_of_page(page_id)]

    def _boxes_overlap(a: dict, b: dict) -> bool:
        top = max(a["y"], b["y"])
        bottom = min(a["y"] + a["height"], b["y"] + b["height"])
        overlap = bottom - top
        return overlap > 0.5 * min(a["height"], b["height"])

    @app.post("/api/pages/{page_id}/segment", dependencies=[auth])
    def segment_page(page_id: str, req: schemas.SegmentRequest | None = None) -> list[schemas.LineOut]:
        req = req or schemas.SegmentRequest()
        page = get_or_404("pages", page_id)
        existing = store.lines_of_page(page_id)
        if existing and all(l["status"] == "corrected" for l in existing) and not req.force:
            raise HTTPException(409, "all lines are corrected; pass force=true to resegment")

        image = store.get_image(page["image"])
        binary = imaging.otsu_binarize(image)
        if req.deskew:
            binary, _angle = imaging.deskew(binary)
        boxes = imaging.segment_lines(binary, req.min_gap, req.min_height)

        kept = [l for l in existing if l["status"] != "unprocessed"]
        for line in existing:
            if line["status"] == "unprocessed":
                store.delete("lines", line["id"])
        new_lines = list(kept)
        for box in boxes:
            box_dict = {"x": box.x, "y": box.y, "width": box.width, "height": box.height}
            if any(_boxes_overlap(box_dict, l["box"]) for l in kept):
                continue
            record = {
                "id": new_id(),
                "page_id": page_id,
                "box": box_dict,
                "status": "unprocessed",
                "ocr_text": None,
                "ocr_confidence": None,
                "corrected_text": None,
                "charset_ok": None,
                "bad_chars": [],
            }
            store.put("lines", record)
            new_lines.append(record)
        new_lines.sort(key=lambda l: l["box"]["y"])
        page = dict(page)
        page["line_ids"] = [l["id"] for l in new_lines]
        store.put("pages", page)
        return [line_out(l) for l in new_lines]

    @app.put("/api/pages/{page_id}/lines", dependencies=[auth])
    def put_page_lines(page_id: str, boxes: list[schemas.Box]) -> list[schemas.LineOut]:
        page = get_or_404("pages", page_id)
        for box in boxes:
            try:
                imaging.LineBox(box.x, box.y, box.width, box.height).validate_within(
                    page["width"], page["height"]
                )
            except imaging.ImageError as exc:
                raise HTTPException(422, str(exc))

        existing = store.lines_of_page(page_id)
        corrected_by_box = {
            json.dumps(l["box"], sort_keys=True): l
            for l in existing
            if l["status"] == "corrected"
        }
        new_lines = []
        for box in boxes:
            box_dict = box.model_dump()
            key = json.dumps(box_dict, sort_keys=True)
            if key in corrected_by_box:
                new_lines.append(corrected_by_box.pop(key))
                continue
            record = {
                "id": new_id(),
                "page_id": page_id,
                "box": box_dict,
                "status": "unprocessed",
                "ocr_text": None,
                "ocr_confidence": None,
                "corrected_text": None,
                "charset_ok": None,
                "bad_chars": [],
            }
            store.put("lines", record)
            new_lines.append(record)
        keep_ids = {l["id"] for l in new_lines}
        for line in existing:
            if line["id"] not in keep_ids:
                store.delete("lines", line["id"])
        new_lines.sort(key=lambda l: l["box"]["y"])
        page = dict(page)
        page["line_ids"] = [l["id"] for l in new_lines]
        store.put("pages", page)
        return [line_out(l) for l in new_lines]

    # --------------------------------------------------------------- lines

    @app.get("/api/lines/{line_id}")
    def get_line(line_id: str) -> schemas.LineOut:
        return line_out(get_or_404("lines", line_id))

    @app.post("/api/lines/{line_id}/ocr", dependencies=[auth])
    def ocr_line(line_id: str, req: schemas.OcrRequest | None = None) -> schemas.OcrOut:
        req = req or schemas.OcrRequest()
        line = dict(get_or_404("lines", line_id))
        _name, model = resolve_model(req.model)
        page = store.get("pages", line["page_id"])
        image = store.get_image(page["image"])
        box = imaging.LineBox(**line["box"])
        prepared = imaging.prepare_line(image, box)
        [(text, confidence)] = model.ocr([prepared])
        line["ocr_text"] = text
        line["ocr_confidence"] = confidence
        if line["status"] == "unprocessed":
            line["status"] = "ocr_done"
        store.put("lines", line)
        return schemas.OcrOut(text=text, confidence=confidence)

    @app.put("/api/lines/{line_id}/text", dependencies=[auth])
    def correct_line(line_id: str, req: schemas.TextRequest) -> schemas.LineOut:
        line = dict(get_or_404("lines", line_id))
        text = normalize_text(req.text)
        ok, bad = charset_check(text)
        line["corrected_text"] = text
        line["status"] = "corrected"
        line["charset_ok"] = ok
        line["bad_chars"] = bad
        store.put("lines", line)
        return line_out(line)

    # -------------------------------------------------------------- export

    @app.get("/api/export")
    def export_labels(document: str, status: str = "corrected"):
        if status != "corrected":
            raise HTTPException(422, "only status=corrected export is supported")
        get_or_404("documents", document)
        good, excluded = exportable_lines([document])
        from PIL import Image

        buf = io.BytesIO()
        with zipfile.ZipFile(buf, "w", zipfile.ZIP_DEFLATED) as zf:
            manifest_rows = []
            for k, line in enumerate(good):
                page = store.get("pages", line["page_id"])
                image = store.get_image(page["image"])
                b = line["box"]
                crop = image[b["y"]:b["y"] + b["height"], b["x"]:b["x"] + b["width"]]
                name = f"line_{k:05d}.png"
                png = io.BytesIO()
                Image.fromarray(crop).save(png, format="PNG")
                zf.writestr(name, png.getvalue())
                manifest_rows.append(
                    json.dumps(
                        {"image": name, "text": line["corrected_text"], "source": "correction"},
                        ensure_ascii=False,
                    )
                )
            zf.writestr("manifest.jsonl", "\n".join(manifest_rows) + ("\n" if manifest_rows else ""))
            zf.writestr(
                "report.json",
                json.dumps({"excluded": excluded}, ensure_ascii=False, indent=2),
            )
        return Response(
            content=buf.getvalue(),
            media_type="application/zip",
            headers={"Content-Disposition": f'attachment; filename="export-{document}.zip"'},
        )

    # ---------------------------------------------------------------- jobs

    @app.post("/api/jobs/finetune", dependencies=[auth])
    def launch_finetune(req: schemas.FinetuneRequest):
        if req.base_model not in list_available_models(config.registry_dir):
            raise HTTPException(422, f"unknown base model {req.base_model!r}")
        good, _excluded = exportable_lines(req.documents)
        if not good:
            raise HTTPException(422, "no exportable corrected lines to fine-tune on")
        job = {
            "id": new_id(),
            "kind": "finetune",
            "status": "queued",
            "progress_epoch": 0,
            "progress_total": req.epochs,
            "curve": [],
            "result_model": None,
            "error": None,
            "created_at": now_rfc3339(),
            "finished_at": None,
        }
        params = req.model_dump()
        try:
            runner.launch_finetune(job, good, params)
        except JobAlreadyRunning as exc:
            raise HTTPException(409, str(exc))
        return {"job_id": job["id"]}

    @app.get("/api/jobs")
    def list_jobs() -> list[schemas.JobOut]:
        jobs = sorted(store.all("jobs"), key=lambda j: j["created_at"])
        return [schemas.JobOut(**j) for j in jobs]

    @app.get("/api/jobs/{job_id}")
    def get_job(job_id: str) -> schemas.JobOut:
        return schemas.JobOut(**get_or_404("jobs", job_id))

    # -------------------------------------------------------------- models

    @app.get("/api/models")
    def get_models() -> list[schemas.ModelOut]:
        out = []
        for name in list_available_models(config.registry_dir):
            try:
                header = read_model_header(config.registry_dir / f"{name}.klch")
            except ModelFormatError:
                continue
            out.append(
                schemas.ModelOut(
                    name=name,
                    charset_size=len(header.get("charset", [])) + 1,
                    provenance=header.get("metadata", {}),
                )
            )
        return out

    return app
