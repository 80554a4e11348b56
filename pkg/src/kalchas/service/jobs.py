"""Background fine-tune job execution; one job per service instance."""

from __future__ import annotations

import tempfile
import threading
import traceback
from datetime import datetime, timezone
from pathlib import Path

from .. import data as dataset_io
from ..model import load_ocr_model, publish_model
from ..train import TrainConfig, fine_tune
from .store import Store, now_rfc3339


class JobAlreadyRunning(RuntimeError):
    pass


def export_entries(store: Store, line_records: list[dict], out_dir: Path) -> list[dataset_io.ManifestEntry]:
    """Write line crops + transcripts to out_dir as a parallel-file dataset."""
    from PIL import Image

    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for k, line in enumerate(line_records):
        page = store.get("pages", line["page_id"])
        image = store.get_image(page["image"])
        box = line["box"]
        crop = image[box["y"]:box["y"] + box["height"], box["x"]:box["x"] + box["width"]]
        img_path = out_dir / f"line_{k:05d}.png"
        Image.fromarray(crop).save(img_path)
        entries.append(
            dataset_io.ManifestEntry(
                img_path, line["corrected_text"], source_tag="correction"
            )
        )
    return entries


class JobRunner:
    """Serializes background jobs: at most one queued-or-running at a time."""

    def __init__(self, store: Store, registry_dir: Path,
                 extra_manifest: Path | None = None):
        self.store = store
        self.registry_dir = Path(registry_dir)
        self.extra_manifest = extra_manifest
        self._lock = threading.Lock()
        self._thread: threading.Thread | None = None

    @property
    def active(self) -> bool:
        return self._thread is not None and self._thread.is_alive()

    def launch_finetune(self, job: dict, line_records: list[dict], params: dict) -> None:
        with self._lock:
            if self.active:
                raise JobAlreadyRunning("a job is already queued or running")
            self.store.put("jobs", job)
            self._thread = threading.Thread(
                target=self._run_finetune,
                args=(job["id"], line_records, params),
                daemon=True,
            )
            self._thread.start()

    def wait(self, timeout: float | None = None) -> None:
        if self._thread is not None:
            self._thread.join(timeout)

    def _update(self, job_id: str, **fields) -> dict:
        job = dict(self.store.get("jobs", job_id))
        job.update(fields)
        self.store.put("jobs", job)
        return job

    def _run_finetune(self, job_id: str, line_records: list[dict], params: dict) -> None:
        try:
            self._update(job_id, status="running")
            base_name = params["base_model"]
            model = load_ocr_model(base_name, self.registry_dir)
            config = TrainConfig(
                epochs=params["epochs"],
                batch_size=params["batch_size"],
                learning_rate=params["learning_rate"],
                seed=params["seed"],
                eval_every=params["eval_every"],
            )
            with tempfile.TemporaryDirectory() as tmp:
                entries = export_entries(self.store, line_records, Path(tmp))
                if self.extra_manifest is not None:
                    extra, _errors = dataset_io.load_manifest(self.extra_manifest)
                    entries = entries + extra

                def progress(point, total):
                    job = self.store.get("jobs", job_id)
                    curve = list(job.get("curve", []))
                    curve.append(
                        {
                            "epoch": point.epoch,
                            "train_loss": point.train_loss,
                            "val_loss": point.val_loss,
                            "train_cer": point.train_cer,
                            "val_cer": point.val_cer,
                        }
                    )
                    self._update(
                        job_id,
                        progress_epoch=point.epoch,
                        progress_total=total,
                        curve=curve,
                    )

                model, _curves, _ckpt = fine_tune(
                    model, entries, config, progress=progress
                )
            stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%SZ")
            new_name = f"{base_name}-ft-{stamp}"
            publish_model(model, new_name, self.registry_dir)
            self._update(
                job_id,
                status="done",
                result_model=new_name,
                finished_at=now_rfc3339(),
            )
        except Exception as exc:  # job must record any failure
            self._update(
                job_id,
                status="failed",
                error=f"{type(exc).__name__}: {exc}",
                finished_at=now_rfc3339(),
            )
            traceback.print_exc()
