"""Command-line entry points for the full pipeline.

Exit codes: 0 success, 1 operational failure, 2 usage error. Data goes to
stdout; diagnostics to stderr.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import data as dataset_io
from . import imaging, metrics
from . import train as training
from .charset import CharsetError, load_charset, load_default_charset
from .model import (
    ConfigError,
    ModelFormatError,
    build_model,
    default_config,
    load_model,
    reduced_config,
    save_model,
)
from .nn import layer_suite
from .nn.gradcheck import GradCheckError


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


@click.group()
def main():
    """Polytonic Greek OCR toolkit."""


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=False))
@click.option("--image", "images", required=True, multiple=True, type=click.Path(exists=False))
@click.option("--json", "as_json", is_flag=True, help="emit JSON with confidences")
def ocr(model_path, images, as_json):
    """Recognize text line images; one output line per input."""
    try:
        model = load_model(model_path).astype(np.float32)
    except (OSError, ModelFormatError) as exc:
        _fail(f"{model_path}: {exc}")
    lines = []
    for path in images:
        try:
            page = imaging.load_page_image(path)
        except OSError as exc:
            _fail(f"{path}: {exc}")
        box = imaging.LineBox(0, 0, page.shape[1], page.shape[0])
        lines.append(imaging.prepare_line(page, box))
    results = model.ocr(lines)
    if model.last_lines_per_sec is not None:
        click.echo(f"throughput: {model.last_lines_per_sec:.2f} lines/sec", err=True)
    if as_json:
        click.echo(
            json.dumps(
                [
                    {"image": str(p), "text": t, "confidence": c}
                    for p, (t, c) in zip(images, results)
                ],
                ensure_ascii=False,
            )
        )
    else:
        for text, _conf in results:
            click.echo(text)


@main.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=False))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--epochs", default=100, show_default=True)
@click.option("--batch", "batch_size", default=32, show_default=True)
@click.option("--lr", "learning_rate", default=1e-4, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--split", "split_fraction", default=0.9, show_default=True)
@click.option("--eval-every", default=1, show_default=True)
@click.option("--charset", "charset_path", type=click.Path(exists=False),
              help="charset file (default: shipped polytonic charset)")
@click.option("--arch", type=click.Choice(["default", "reduced"]), default="default",
              show_default=True)
@click.option("--resume", "resume_dir", type=click.Path(), help="checkpoint dir to resume from")
def train(manifest_path, out_dir, epochs, batch_size, learning_rate, seed,
          split_fraction, eval_every, charset_path, arch, resume_dir):
    """Train a model; writes best/last checkpoints and curves.csv."""
    try:
        entries, errors = dataset_io.load_manifest(manifest_path)
    except dataset_io.DatasetError as exc:
        _fail(str(exc))
    for problem in errors:
        click.echo(f"warning: {problem}", err=True)
    try:
        cs = load_charset(charset_path) if charset_path else load_default_charset()
    except (OSError, CharsetError) as exc:
        _fail(str(exc))
    config_fn = default_config if arch == "default" else reduced_config
    try:
        cfg = training.TrainConfig(
            epochs=epochs, batch_size=batch_size, learning_rate=learning_rate,
            seed=seed, split_fraction=split_fraction, eval_every=eval_every,
        )
    except ValueError as exc:
        raise click.UsageError(str(exc))
    state = None
    try:
        model = build_model(config_fn(cs.size), cs, seed=seed)
        if resume_dir:
            state = training.load_state(
                Path(resume_dir) / "last.state", Path(resume_dir) / "last.klch"
            )

        def progress(point, total):
            click.echo(
                f"epoch {point.epoch}/{total}: loss {point.train_loss:.4f} "
                f"val_loss {point.val_loss:.4f} cer {point.train_cer:.4f} "
                f"val_cer {point.val_cer:.4f}",
                err=True,
            )

        model, curves, checkpoints = training.train(
            model, entries, cfg, out_dir=out_dir, state=state, progress=progress
        )
    except (training.IngestionError, training.TrainingError, ConfigError,
            ModelFormatError, OSError) as exc:
        _fail(str(exc))
    click.echo(str(checkpoints.get("last", "")))


@main.command(name="eval")
@click.option("--model", "model_path", required=True, type=click.Path(exists=False))
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=False))
@click.option("--json", "as_json", is_flag=True)
@click.option("--top-k", default=20, show_default=True)
def eval_cmd(model_path, manifest_path, as_json, top_k):
    """Report CER/WER and the confusion-pair table for a manifest."""
    try:
        model = load_model(model_path).astype(np.float32)
        entries, errors = dataset_io.load_manifest(manifest_path)
        for problem in errors:
            click.echo(f"warning: {problem}", err=True)
        samples = training.ingest(entries, model)
    except (OSError, ModelFormatError, dataset_io.DatasetError,
            training.IngestionError) as exc:
        _fail(str(exc))
    refs = [s.transcript for s in samples]
    hyps = [t for t, _c in model.ocr([s.image for s in samples])]
    report = metrics.evaluate(refs, hyps, top_k=top_k)
    click.echo(report.to_json() if as_json else report.to_text())


@main.command()
@click.option("--texts", "texts_path", required=True, type=click.Path(exists=False),
              help="UTF-8 file, one line of text per synthetic line image")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True)
@click.option("--atlas", "atlas_prefix", type=click.Path(),
              help="atlas PNG path (with matching .json); default: shipped atlas")
@click.option("--noise", default=0.0, show_default=True)
@click.option("--spacing-jitter", default=0, show_default=True)
@click.option("--baseline-jitter", default=0, show_default=True)
def synth(texts_path, out_dir, seed, atlas_prefix, noise, spacing_jitter, baseline_jitter):
    """Render a synthetic line corpus and its manifest."""
    try:
        raw = Path(texts_path).read_text("utf-8")
    except OSError as exc:
        _fail(str(exc))
    texts = [line for line in raw.splitlines() if line.strip()]
    try:
        if atlas_prefix:
            png = Path(atlas_prefix)
            atlas = dataset_io.GlyphAtlas.from_files(png, png.with_suffix(".json"))
        else:
            atlas = dataset_io.load_default_atlas()
        style = dataset_io.RenderStyle(
            noise_p=noise, spacing_jitter=spacing_jitter, baseline_jitter=baseline_jitter
        )
        manifest = dataset_io.generate_corpus(atlas, texts, out_dir, style, seed)
    except (dataset_io.DatasetError, OSError) as exc:
        _fail(str(exc))
    click.echo(str(manifest))


@main.command()
@click.option("--image", "image_path", required=True, type=click.Path(exists=False))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--min-gap", default=3, show_default=True)
@click.option("--min-height", default=8, show_default=True)
@click.option("--deskew/--no-deskew", "do_deskew", default=False, show_default=True)
def segment(image_path, out_dir, min_gap, min_height, do_deskew):
    """Segment a page image into cropped line images."""
    from PIL import Image

    try:
        page = imaging.load_page_image(image_path)
    except OSError as exc:
        _fail(str(exc))
    binary = imaging.otsu_binarize(page)
    if do_deskew:
        binary, angle = imaging.deskew(binary)
        click.echo(f"deskew angle: {angle:.2f} deg", err=True)
        page = binary
    boxes = imaging.segment_lines(binary, min_gap, min_height)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for k, box in enumerate(boxes):
        crop = page[box.y:box.y + box.height, box.x:box.x + box.width]
        path = out / f"line_{k:03d}.png"
        Image.fromarray(crop).save(path)
        click.echo(str(path))


@main.command()
@click.option("--seeds", default=5, show_default=True)
@click.option("--tolerance", default=1e-4, show_default=True)
def gradcheck(seeds, tolerance):
    """Finite-difference check of every layer; nonzero exit on failure."""
    worst: dict[str, float] = {}
    try:
        for seed in range(seeds):
            for layer, err in layer_suite(seed=seed).items():
                worst[layer] = max(worst.get(layer, 0.0), err)
    except GradCheckError as exc:
        _fail(str(exc))
    failed = False
    for layer in sorted(worst):
        status = "ok" if worst[layer] <= tolerance else "FAIL"
        click.echo(f"{layer}: max rel error {worst[layer]:.3e} [{status}]")
        failed |= worst[layer] > tolerance
    if failed:
        sys.exit(1)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
def serve(config_path):
    """Run the HTTP correction service."""
    import uvicorn

    from .service import create_app, load_config
    from .service.config import ConfigError as ServiceConfigError

    try:
        cfg = load_config(config_path)
    except ServiceConfigError as exc:
        raise click.UsageError(str(exc))
    app = create_app(cfg)
    uvicorn.run(app, host="127.0.0.1", port=cfg.port)


if __name__ == "__main__":
    main()
