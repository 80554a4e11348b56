"""Dataset manifests and the synthetic polytonic line renderer.

Manifest formats: JSONL ({"image": path, "text": str, "source": str} per
line) or a directory of parallel files (X.png + X.gt.txt). The renderer
composites pre-rendered glyph bitmaps from the shipped atlas; degradation
knobs (noise, jitter, contrast) default off.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .charset import normalize_text


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    image_path: Path
    transcript: str
    source_tag: str = "unknown"
    split_hint: str | None = None


def load_manifest(path) -> tuple[list[ManifestEntry], list[str]]:
    """Load a JSONL manifest or a parallel-file directory.

    Per-entry problems are collected into the returned error list instead of
    aborting; raises DatasetError only if no valid entry remains.
    """
    path = Path(path)
    entries: list[ManifestEntry] = []
    errors: list[str] = []
    if path.is_dir():
        for img in sorted(path.glob("*.png")):
            gt = img.with_name(img.name[:-4] + ".gt.txt")
            if not gt.is_file():
                errors.append(f"{img.name}: missing {gt.name}")
                continue
            text = normalize_text(gt.read_text("utf-8").rstrip("\n"))
            if not text:
                errors.append(f"{gt.name}: empty transcript")
                continue
            entries.append(ManifestEntry(img, text, source_tag="files"))
    elif path.is_file():
        base = path.parent
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                raw = raw.strip()
                if not raw:
                    continue
                try:
                    obj = json.loads(raw)
                    img = base / obj["image"]
                    text = normalize_text(obj["text"])
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    errors.append(f"{path.name}:{lineno}: {exc}")
                    continue
                if not text:
                    errors.append(f"{path.name}:{lineno}: empty transcript")
                    continue
                if not img.is_file():
                    errors.append(f"{path.name}:{lineno}: missing image {obj['image']}")
                    continue
                entries.append(
                    ManifestEntry(img, text, source_tag=obj.get("source", "unknown"),
                                  split_hint=obj.get("split"))
                )
    else:
        raise DatasetError(f"manifest path {path} does not exist")
    entries.sort(key=lambda e: str(e.image_path))
    if not entries:
        raise DatasetError(f"no valid entries in {path}: {errors}")
    return entries, errors


# ----------------------------------------------------------------- atlas


class GlyphAtlas:
    """Per-character ink bitmaps sharing a common baseline."""

    def __init__(self, line_height: int, baseline: int, glyphs: dict[str, np.ndarray]):
        self.line_height = line_height
        self.baseline = baseline
        self.glyphs = glyphs
        for ch, g in glyphs.items():
            if g.shape[0] != line_height:
                raise DatasetError(f"glyph {ch!r} height {g.shape[0]} != {line_height}")

    def __contains__(self, ch: str) -> bool:
        return ch in self.glyphs

    @staticmethod
    def from_files(png_path, json_path) -> "GlyphAtlas":
        from PIL import Image

        meta = json.loads(Path(json_path).read_text("utf-8"))
        with Image.open(png_path) as im:
            sheet = np.asarray(im.convert("L"))
        ink = sheet < 128
        lh = meta["line_height"]
        glyphs = {}
        for ch, (x, y, w) in meta["glyphs"].items():
            glyphs[ch] = ink[y:y + lh, x:x + w].astype(np.uint8)
        return GlyphAtlas(lh, meta["baseline"], glyphs)


def load_default_atlas() -> GlyphAtlas:
    data = resources.files("kalchas.assets")
    with resources.as_file(data.joinpath("glyph_atlas.png")) as png:
        with resources.as_file(data.joinpath("glyph_atlas.json")) as meta:
            return GlyphAtlas.from_files(png, meta)


# -------------------------------------------------------------- rendering


@dataclass(frozen=True)
class RenderStyle:
    spacing: int = 2            # base inter-glyph gap, px
    spacing_jitter: int = 0     # +- uniform integer jitter
    baseline_jitter: int = 0    # +- vertical glyph offset, px (max 2)
    noise_p: float = 0.0        # salt-and-pepper flip probability
    contrast: float = 1.0       # ink darkness scale in (0, 1]
    margin: int = 6             # white border on all sides
    max_width: int = 4000


def render_line(
    atlas: GlyphAtlas, text: str, style: RenderStyle = RenderStyle(), seed: int = 0
) -> tuple[np.ndarray, str]:
    """Composite glyphs onto a white canvas; deterministic per seed.

    Returns (grayscale uint8 image, NFC transcript).
    """
    text = normalize_text(text)
    if not text.strip():
        raise DatasetError("cannot render empty text")
    rng = np.random.default_rng(seed)
    for ch in text:
        if ch not in atlas:
            raise DatasetError(f"no glyph for character {ch!r} (U+{ord(ch):04X})")

    pieces = []
    for pos, ch in enumerate(text):
        gap = style.spacing
        if style.spacing_jitter:
            gap += int(rng.integers(-style.spacing_jitter, style.spacing_jitter + 1))
        dy = 0
        if style.baseline_jitter:
            dy = int(rng.integers(-style.baseline_jitter, style.baseline_jitter + 1))
        pieces.append((ch, max(0, gap) if pos else 0, dy))

    pad = max(abs(p[2]) for p in pieces)
    height = atlas.line_height + 2 * (style.margin + pad)
    width = 2 * style.margin + sum(
        atlas.glyphs[ch].shape[1] + gap for ch, gap, _ in pieces
    )
    if width > style.max_width:
        raise DatasetError(f"rendered width {width} exceeds max {style.max_width}")

    canvas = np.full((height, width), 255, dtype=np.uint8)
    ink_value = int(round(255 * (1.0 - style.contrast)))
    x = style.margin
    y0 = style.margin + pad
    for ch, gap, dy in pieces:
        g = atlas.glyphs[ch]
        x += gap
        region = canvas[y0 + dy:y0 + dy + atlas.line_height, x:x + g.shape[1]]
        region[g == 1] = ink_value
        x += g.shape[1]

    if style.noise_p > 0:
        flips = rng.random(canvas.shape) < style.noise_p
        canvas = np.where(flips, 255 - canvas, canvas).astype(np.uint8)
    return canvas, text


def generate_corpus(
    atlas: GlyphAtlas,
    texts: list[str],
    out_dir,
    style: RenderStyle = RenderStyle(),
    seed: int = 0,
) -> Path:
    """Render texts into out_dir and write manifest.jsonl; returns its path."""
    from PIL import Image

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest_path = out / "manifest.jsonl"
    errors = []
    with open(manifest_path, "w", encoding="utf-8") as fh:
        for k, text in enumerate(texts):
            name = f"line_{k:05d}.png"
            try:
                img, transcript = render_line(atlas, text, style, seed=seed + k)
                Image.fromarray(img).save(out / name)
            except (DatasetError, OSError) as exc:
                errors.append(f"{name}: {exc}")
                continue
            fh.write(
                json.dumps(
                    {"image": name, "text": transcript, "source": "synthetic"},
                    ensure_ascii=False,
                )
                + "\n"
            )
    if errors:
        (out / "errors.txt").write_text("\n".join(errors), encoding="utf-8")
    return manifest_path
