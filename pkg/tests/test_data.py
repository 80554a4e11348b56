import json

import numpy as np
import pytest
from PIL import Image

from kalchas import data as dataset_io
from kalchas.ctc import ctc_feasible
from kalchas.data import (
    DatasetError,
    GlyphAtlas,
    ManifestEntry,
    RenderStyle,
    generate_corpus,
    load_manifest,
    render_line,
)
from kalchas.imaging import LineBox, prepare_line
from kalchas.model import build_model, reduced_config


def write_png(path, shape=(48, 120)):
    Image.fromarray(np.full(shape, 255, dtype=np.uint8)).save(path)


# --- manifests -------------------------------------------------------------


def test_jsonl_manifest(tmp_path):
    write_png(tmp_path / "a.png")
    write_png(tmp_path / "b.png")
    manifest = tmp_path / "manifest.jsonl"
    manifest.write_text(
        json.dumps({"image": "b.png", "text": "βῆτα", "source": "test"}) + "\n"
        + json.dumps({"image": "a.png", "text": "ἄλφα", "split": "val"}) + "\n",
        encoding="utf-8",
    )
    entries, errors = load_manifest(manifest)
    assert errors == []
    # Sorted by path for split determinism.
    assert [e.image_path.name for e in entries] == ["a.png", "b.png"]
    assert entries[0].split_hint == "val"
    assert entries[1].source_tag == "test"


def test_jsonl_collects_problems(tmp_path):
    write_png(tmp_path / "ok.png")
    manifest = tmp_path / "manifest.jsonl"
    manifest.write_text(
        json.dumps({"image": "ok.png", "text": "ἕν"}) + "\n"
        + "not json\n"
        + json.dumps({"image": "missing.png", "text": "δύο"}) + "\n"
        + json.dumps({"image": "ok.png", "text": ""}) + "\n"
        + json.dumps({"wrong": "keys"}) + "\n",
        encoding="utf-8",
    )
    entries, errors = load_manifest(manifest)
    assert len(entries) == 1
    assert len(errors) == 4


def test_jsonl_all_bad_raises(tmp_path):
    manifest = tmp_path / "manifest.jsonl"
    manifest.write_text("not json\n", encoding="utf-8")
    with pytest.raises(DatasetError, match="no valid entries"):
        load_manifest(manifest)


def test_directory_manifest(tmp_path):
    write_png(tmp_path / "x1.png")
    (tmp_path / "x1.gt.txt").write_text("γράμμα\n", encoding="utf-8")
    write_png(tmp_path / "x2.png")
    (tmp_path / "x2.gt.txt").write_text("λόγος", encoding="utf-8")
    write_png(tmp_path / "orphan.png")  # no transcript
    entries, errors = load_manifest(tmp_path)
    assert [e.image_path.name for e in entries] == ["x1.png", "x2.png"]
    assert entries[0].transcript == "γράμμα"
    assert len(errors) == 1 and "orphan" in errors[0]


def test_missing_manifest_path(tmp_path):
    with pytest.raises(DatasetError, match="does not exist"):
        load_manifest(tmp_path / "nope.jsonl")


def test_transcripts_are_nfc_normalized(tmp_path):
    write_png(tmp_path / "a.png")
    manifest = tmp_path / "manifest.jsonl"
    # alpha + combining acute (decomposed) must normalize to U+03AC.
    manifest.write_text(
        json.dumps({"image": "a.png", "text": "\u03b1\u0301"}) + "\n",
        encoding="utf-8",
    )
    entries, _ = load_manifest(manifest)
    assert entries[0].transcript == "\u03ac"


# --- atlas -------------------------------------------------------------------


def test_default_atlas_covers_charset(atlas, polytonic_charset):
    for ch in polytonic_charset.chars:
        assert ch in atlas


def test_atlas_glyph_height_checked():
    with pytest.raises(DatasetError, match="height"):
        GlyphAtlas(10, 8, {"α": np.zeros((9, 5), dtype=np.uint8)})


# --- rendering -----------------------------------------------------------------


def test_render_deterministic(atlas):
    a, _ = render_line(atlas, "ἀγορά", seed=3)
    b, _ = render_line(atlas, "ἀγορά", seed=3)
    np.testing.assert_array_equal(a, b)


def test_render_seed_changes_jittered_output(atlas):
    style = RenderStyle(spacing_jitter=2, baseline_jitter=1)
    a, _ = render_line(atlas, "ἀγορά", style, seed=1)
    b, _ = render_line(atlas, "ἀγορά", style, seed=2)
    assert a.shape != b.shape or not np.array_equal(a, b)


def test_render_returns_nfc_transcript(atlas):
    img, transcript = render_line(atlas, "\u03b1\u0301", seed=0)
    assert transcript == "\u03ac"
    assert img.dtype == np.uint8


def test_render_empty_text_rejected(atlas):
    with pytest.raises(DatasetError):
        render_line(atlas, "   ", seed=0)


def test_render_unknown_glyph_rejected(atlas):
    with pytest.raises(DatasetError, match="U\\+0051"):
        render_line(atlas, "Q", seed=0)


def test_render_max_width_enforced(atlas):
    style = RenderStyle(max_width=50)
    with pytest.raises(DatasetError, match="width"):
        render_line(atlas, "ἄνθρωπος τις ἦν", style, seed=0)


def test_render_ink_fraction(atlas):
    img, _ = render_line(atlas, "μῆνιν ἄειδε θεά", seed=0)
    ink_fraction = (img < 128).mean()
    assert 0.0 < ink_fraction < 0.5


def test_render_noise_flips_pixels(atlas):
    clean, _ = render_line(atlas, "λόγος", seed=4)
    noisy, _ = render_line(atlas, "λόγος", RenderStyle(noise_p=0.05), seed=4)
    assert (clean != noisy).mean() > 0.01


# --- corpus generation -----------------------------------------------------------


def test_generate_corpus_round_trip(tmp_path, atlas, polytonic_charset):
    texts = ["ἀγορά", "πόλις ἦν", "θεὸς λόγος"]
    manifest = generate_corpus(atlas, texts, tmp_path, seed=5)
    entries, errors = load_manifest(manifest)
    assert errors == []
    assert [e.transcript for e in entries] == texts
    assert all(e.source_tag == "synthetic" for e in entries)


def test_generated_samples_survive_ingestion(overfit_corpus, polytonic_charset):
    # Every sample must load, encode, and fit its CTC target in T frames.
    _manifest, entries = overfit_corpus
    seq_len = reduced_config(polytonic_charset.size).seq_len
    from kalchas.imaging import load_page_image

    for entry in entries:
        page = load_page_image(entry.image_path)
        line = prepare_line(page, LineBox(0, 0, page.shape[1], page.shape[0]))
        assert line.shape == (80, 760)
        target = polytonic_charset.encode(entry.transcript)
        assert ctc_feasible(seq_len, target)


def test_generate_corpus_records_errors(tmp_path, atlas):
    manifest = generate_corpus(atlas, ["ἀγορά", "Zzz"], tmp_path, seed=0)
    entries, errors = load_manifest(manifest)
    assert len(entries) == 1
    assert (tmp_path / "errors.txt").exists()
