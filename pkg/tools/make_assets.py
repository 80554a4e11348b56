"""Generate the shipped charset file and glyph atlas (PNG grid + JSON index).

Run from the repo root:  python3 tools/make_assets.py
Outputs land in src/kalchas/data/ and are committed as package data.
"""

import json
import unicodedata
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFont

FONT_PATH = "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf"
FONT_SIZE = 32
LINE_HEIGHT = 48
BASELINE = 36  # rows above the baseline inside each glyph cell
SPACE_WIDTH = 10

OUT_DIR = Path(__file__).resolve().parent.parent / "src" / "kalchas" / "assets"

PUNCTUATION = list(" .,·;’‘'-—()«»…!:“”")


def candidate_chars() -> list[str]:
    chars = []
    # Basic Greek block letters (tonos forms included).
    for cp in range(0x0386, 0x03CF):
        ch = chr(cp)
        try:
            unicodedata.name(ch)
        except ValueError:
            continue
        if unicodedata.category(ch).startswith("L") and unicodedata.normalize("NFC", ch) == ch:
            chars.append(ch)
    # Greek Extended letters that survive NFC unchanged (oxia forms fold away).
    for cp in range(0x1F00, 0x2000):
        ch = chr(cp)
        try:
            unicodedata.name(ch)
        except ValueError:
            continue
        if unicodedata.category(ch) in ("Ll", "Lu") and unicodedata.normalize("NFC", ch) == ch:
            chars.append(ch)
    chars.extend(PUNCTUATION)
    seen = set()
    out = []
    for ch in chars:
        if ch not in seen:
            seen.add(ch)
            out.append(ch)
    return out


def render_glyph(font, ch):
    """Render one character; return a {0,255} ink bitmap of LINE_HEIGHT rows."""
    canvas = Image.new("L", (4 * FONT_SIZE, LINE_HEIGHT), 255)
    draw = ImageDraw.Draw(canvas)
    draw.text((FONT_SIZE, BASELINE), ch, font=font, fill=0, anchor="ls")
    arr = np.asarray(canvas)
    ink_cols = np.where((arr < 128).any(axis=0))[0]
    if ink_cols.size == 0:
        return None
    x0, x1 = ink_cols[0], ink_cols[-1] + 1
    return (arr[:, x0:x1] < 128).astype(np.uint8)


def main():
    font = ImageFont.truetype(FONT_PATH, FONT_SIZE)
    glyphs = {}
    kept = []
    for ch in candidate_chars():
        if ch == " ":
            glyphs[ch] = np.zeros((LINE_HEIGHT, SPACE_WIDTH), dtype=np.uint8)
            kept.append(ch)
            continue
        bitmap = render_glyph(font, ch)
        if bitmap is None:
            print(f"skipping U+{ord(ch):04X} {ch!r}: no glyph in font")
            continue
        glyphs[ch] = bitmap
        kept.append(ch)

    assert len(kept) >= 201, f"charset too small: {len(kept)}"

    OUT_DIR.mkdir(parents=True, exist_ok=True)
    (OUT_DIR / "charset_polytonic.txt").write_text(
        "".join(ch + "\n" for ch in kept), encoding="utf-8"
    )

    # Pack glyphs left-to-right into rows of a grid image.
    max_row_width = 2048
    index = {}
    x = y = 0
    row_imgs = []
    for ch in kept:
        g = glyphs[ch]
        if x + g.shape[1] > max_row_width:
            y += LINE_HEIGHT
            x = 0
        index[ch] = [x, y, int(g.shape[1])]
        x += g.shape[1] + 1
    total_h = y + LINE_HEIGHT
    atlas = np.zeros((total_h, max_row_width), dtype=np.uint8)
    for ch in kept:
        gx, gy, gw = index[ch]
        atlas[gy:gy + LINE_HEIGHT, gx:gx + gw] = glyphs[ch] * 255

    Image.fromarray(255 - atlas).save(OUT_DIR / "glyph_atlas.png")
    meta = {
        "line_height": LINE_HEIGHT,
        "baseline": BASELINE,
        "glyphs": {ch: index[ch] for ch in kept},
    }
    (OUT_DIR / "glyph_atlas.json").write_text(
        json.dumps(meta, ensure_ascii=False), encoding="utf-8"
    )
    print(f"charset: {len(kept)} characters; atlas {atlas.shape[1]}x{total_h}")


if __name__ == "__main__":
    main()
