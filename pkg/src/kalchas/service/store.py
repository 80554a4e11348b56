"""On-disk persistence: content-addressed image blobs plus an append-only
JSON event log, compacted to a snapshot.

Records are plain dicts keyed by id; mutations are serialized by a single
lock and appended to events.jsonl, so a restart replays snapshot + events.
"""

from __future__ import annotations

import hashlib
import io
import json
import threading
import uuid
from datetime import datetime, timezone
from pathlib import Path

import numpy as np


def now_rfc3339() -> str:
    return datetime.now(timezone.utc).isoformat().replace("+00:00", "Z")


def new_id() -> str:
    return uuid.uuid4().hex


class NotFound(KeyError):
    pass


class Store:
    COLLECTIONS = ("documents", "pages", "lines", "jobs")

    def __init__(self, root):
        self.root = Path(root)
        self.blob_dir = self.root / "blobs"
        self.blob_dir.mkdir(parents=True, exist_ok=True)
        self.events_path = self.root / "events.jsonl"
        self.snapshot_path = self.root / "snapshot.json"
        self.lock = threading.RLock()
        self.state: dict[str, dict[str, dict]] = {c: {} for c in self.COLLECTIONS}
        self._load()

    # ------------------------------------------------------------ persist

    def _load(self) -> None:
        if self.snapshot_path.is_file():
            snap = json.loads(self.snapshot_path.read_text("utf-8"))
            for c in self.COLLECTIONS:
                self.state[c] = snap.get(c, {})
        if self.events_path.is_file():
            with open(self.events_path, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        self._apply(json.loads(line))

    def _apply(self, event: dict) -> None:
        op = event["op"]
        if op == "put":
            self.state[event["collection"]][event["record"]["id"]] = event["record"]
        elif op == "delete":
            self.state[event["collection"]].pop(event["id"], None)

    def _append(self, event: dict) -> None:
        self._apply(event)
        with open(self.events_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event, ensure_ascii=False) + "\n")

    def compact(self) -> None:
        """Fold the event log into the snapshot."""
        with self.lock:
            tmp = self.snapshot_path.with_suffix(".tmp")
            tmp.write_text(json.dumps(self.state, ensure_ascii=False), encoding="utf-8")
            tmp.replace(self.snapshot_path)
            self.events_path.write_text("")

    # -------------------------------------------------------------- blobs

    def put_image(self, array: np.ndarray) -> str:
        """Store a grayscale image as a content-addressed PNG blob."""
        from PIL import Image

        buf = io.BytesIO()
        Image.fromarray(array).save(buf, format="PNG")
        payload = buf.getvalue()
        digest = hashlib.sha256(payload).hexdigest()
        path = self.blob_dir / f"{digest}.png"
        if not path.exists():
            path.write_bytes(payload)
        return digest

    def blob_path(self, digest: str) -> Path:
        path = self.blob_dir / f"{digest}.png"
        if not path.is_file():
            raise NotFound(f"blob {digest}")
        return path

    def get_image(self, digest: str) -> np.ndarray:
        from PIL import Image

        with Image.open(self.blob_path(digest)) as im:
            return np.asarray(im.convert("L"))

    # ------------------------------------------------------------ records

    def put(self, collection: str, record: dict) -> dict:
        with self.lock:
            self._append({"op": "put", "collection": collection, "record": record})
        return record

    def delete(self, collection: str, record_id: str) -> None:
        with self.lock:
            self._append({"op": "delete", "collection": collection, "id": record_id})

    def get(self, collection: str, record_id: str) -> dict:
        record = self.state[collection].get(record_id)
        if record is None:
            raise NotFound(f"{collection[:-1]} {record_id}")
        return record

    def all(self, collection: str) -> list[dict]:
        return list(self.state[collection].values())

    # --------------------------------------------------------- structured

    def lines_of_page(self, page_id: str) -> list[dict]:
        page = self.get("pages", page_id)
        return [self.get("lines", lid) for lid in page["line_ids"]]
