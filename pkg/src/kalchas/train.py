"""RMSProp training of the CRNN under CTC loss.

Covers dataset splitting, the epoch loop with gradient clipping, loss/CER
curve emission, checkpointing with exact resume, and fine-tuning.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import ctc, imaging, metrics
from .charset import CharsetError
from .data import ManifestEntry
from .model import (
    CrnnModel,
    FORMAT_VERSION,
    _read_container,
    _write_container,
    load_model,
    save_model,
)

STATE_MAGIC = b"KLCHTS01"

CURVES_HEADER = "epoch,train_loss,val_loss,train_cer,val_cer"


class TrainingError(RuntimeError):
    pass


class IngestionError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-4
    rmsprop_alpha: float = 0.99
    rmsprop_eps: float = 1e-8
    split_fraction: float = 0.9
    seed: int = 0
    gradient_clip_norm: float = 5.0  # <= 0 disables clipping
    eval_every: int = 1

    def __post_init__(self):
        if not 0 < self.split_fraction < 1:
            raise ValueError("split_fraction must be in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0 or self.rmsprop_alpha <= 0 or self.rmsprop_eps <= 0:
            raise ValueError("rates must be > 0")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")


@dataclass
class CurvePoint:
    epoch: int
    train_loss: float
    val_loss: float
    train_cer: float
    val_cer: float

    def csv_row(self) -> str:
        return (
            f"{self.epoch},{self.train_loss!r},{self.val_loss!r},"
            f"{self.train_cer!r},{self.val_cer!r}"
        )


def write_curves(curves: list[CurvePoint], path) -> None:
    lines = [CURVES_HEADER] + [p.csv_row() for p in curves]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass
class Sample:
    image: np.ndarray      # 80x760 float line image
    target: list[int]
    transcript: str
    source: str


def split_dataset(items: list, fraction: float, seed: int) -> tuple[list, list]:
    """Deterministic shuffle, then first ceil(fraction*n) items to train."""
    if not items:
        raise IngestionError("empty manifest")
    if not 0 < fraction < 1:
        raise ValueError("fraction must be in (0, 1)")
    order = np.random.default_rng(seed).permutation(len(items))
    n_train = int(np.ceil(fraction * len(items)))
    train = [items[i] for i in order[:n_train]]
    val = [items[i] for i in order[n_train:]]
    return train, val


def ingest(entries: list[ManifestEntry], model: CrnnModel) -> list[Sample]:
    """Load, normalize, encode, and feasibility-check every manifest entry.

    Any bad entry aborts with its index: data bugs surface at ingestion.
    """
    t_len = model.config.seq_len
    samples = []
    problems = []
    for k, entry in enumerate(entries):
        try:
            page = imaging.load_page_image(entry.image_path)
            box = imaging.LineBox(0, 0, page.shape[1], page.shape[0])
            image = imaging.prepare_line(page, box)
            target = model.charset.encode(entry.transcript)
            if not target:
                raise IngestionError("empty transcript")
            if not ctc.ctc_feasible(t_len, target):
                raise IngestionError(
                    f"transcript needs more than {t_len} frames"
                )
            samples.append(Sample(image, target, entry.transcript, entry.source_tag))
        except (OSError, CharsetError, IngestionError, imaging.ImageError) as exc:
            problems.append(f"entry {k} ({entry.image_path}): {exc}")
    if problems:
        raise IngestionError("; ".join(problems))
    return samples


# ----------------------------------------------------------------- state


@dataclass
class TrainState:
    model: CrnnModel
    accumulators: dict[str, np.ndarray]
    epoch: int = 0
    best_val_cer: float = float("inf")
    rng: np.random.Generator = field(default_factory=np.random.default_rng)

    @staticmethod
    def fresh(model: CrnnModel, config: TrainConfig) -> "TrainState":
        acc = {k: np.zeros_like(p.value) for k, p in model.params.items()}
        return TrainState(
            model=model,
            accumulators=acc,
            rng=np.random.default_rng(config.seed),
        )


def rmsprop_step(state: TrainState, lr: float, alpha: float, eps: float) -> None:
    """v <- a*v + (1-a)*g^2; theta <- theta - lr*g/(sqrt(v)+eps); zero grads."""
    for name, p in state.model.params.items():
        g = p.grad
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in {name}")
        v = state.accumulators[name]
        v *= alpha
        v += (1.0 - alpha) * g * g
        p.value -= lr * g / (np.sqrt(v) + eps)
        p.zero_grad()


def clip_gradients(model: CrnnModel, max_norm: float) -> float:
    """Scale all grads so the global norm is at most max_norm."""
    total = 0.0
    for p in model.params.values():
        total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for p in model.params.values():
            p.grad *= scale
    return norm


def save_state(state: TrainState, path) -> None:
    tensors = []
    for name in sorted(state.model.params):
        tensors.append((f"param/{name}", state.model.params[name].value))
        tensors.append((f"rmsprop/{name}", state.accumulators[name]))
    dtype = "<f8" if state.model.dtype == np.float64 else "<f4"
    header = {
        "format_version": FORMAT_VERSION,
        "epoch": state.epoch,
        "best_val_cer": state.best_val_cer,
        "rng_state": json.loads(json.dumps(state.rng.bit_generator.state)),
    }
    _write_container(path, STATE_MAGIC, header, tensors, dtype=dtype)


def load_state(path, model_path) -> TrainState:
    """Rebuild a TrainState from last.klch + the sidecar state file."""
    model = load_model(model_path)
    header, arrays = _read_container(path, STATE_MAGIC)
    dtype = np.dtype(header.get("dtype", "<f8"))
    accumulators = {}
    for (name, _shape), arr in zip(header["tensors"], arrays):
        kind, pname = name.split("/", 1)
        if kind == "param":
            model.params[pname].value = arr.astype(dtype)
        elif kind == "rmsprop":
            accumulators[pname] = arr.astype(dtype)
    rng = np.random.default_rng()
    rng.bit_generator.state = header["rng_state"]
    return TrainState(
        model=model,
        accumulators=accumulators,
        epoch=header["epoch"],
        best_val_cer=header["best_val_cer"],
        rng=rng,
    )


# ------------------------------------------------------------------ loop


def _batch_loss(model: CrnnModel, batch: list[Sample], accumulate: bool):
    """Mean CTC loss over the batch; accumulates parameter grads if asked."""
    images = np.stack([s.image for s in batch])[:, None, :, :]
    if accumulate:
        log_probs, cache = model.forward(images, with_cache=True)
    else:
        log_probs = model.forward(images)
        cache = None
    n = len(batch)
    dlogits = np.zeros_like(log_probs) if accumulate else None
    total = 0.0
    for i, sample in enumerate(batch):
        lp = np.asarray(log_probs[:, i, :], dtype=np.float64)
        # Exact renormalization in float64 absorbs float32 forward roundoff.
        lp = lp - np.logaddexp.reduce(lp, axis=1, keepdims=True)
        result = ctc.ctc_loss(lp, sample.target)
        total += result.loss
        if accumulate:
            dlogits[:, i, :] = result.grad.astype(log_probs.dtype) / n
    if accumulate:
        model.backward(dlogits, cache)
    return total / n, log_probs


def _decode_all(model: CrnnModel, samples: list[Sample], batch_size: int):
    hyps = []
    refs = []
    losses = []
    for start in range(0, len(samples), batch_size):
        batch = samples[start:start + batch_size]
        loss, log_probs = _batch_loss(model, batch, accumulate=False)
        losses.append(loss * len(batch))
        for i, s in enumerate(batch):
            text, _conf = ctc.greedy_decode(np.asarray(log_probs[:, i, :]), model.charset)
            hyps.append(text)
            refs.append(s.transcript)
    mean_loss = sum(losses) / len(samples)
    return metrics.cer(refs, hyps), mean_loss


def train(
    model: CrnnModel,
    entries: list[ManifestEntry],
    config: TrainConfig,
    out_dir=None,
    state: TrainState | None = None,
    progress=None,
) -> tuple[CrnnModel, list[CurvePoint], dict[str, Path]]:
    """Run the training loop; returns (model, curves, checkpoint paths).

    Pass a restored `state` to resume; the run is bit-identical to an
    uninterrupted one in 64-bit mode.
    """
    samples = ingest(entries, model)
    train_set, val_set = split_dataset(samples, config.split_fraction, config.seed)
    if state is None:
        state = TrainState.fresh(model, config)
    else:
        model = state.model

    checkpoints: dict[str, Path] = {}
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    curves: list[CurvePoint] = []
    while state.epoch < config.epochs:
        order = state.rng.permutation(len(train_set))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = [train_set[i] for i in order[start:start + config.batch_size]]
            try:
                loss, _ = _batch_loss(model, batch, accumulate=True)
            except ctc.CtcError as exc:
                raise TrainingError(f"epoch {state.epoch + 1}: {exc}") from exc
            if not np.isfinite(loss):
                ids = [train_set[i].transcript for i in order[start:start + config.batch_size]]
                raise TrainingError(
                    f"non-finite loss at epoch {state.epoch + 1}, batch {ids!r}"
                )
            clip_gradients(model, config.gradient_clip_norm)
            rmsprop_step(state, config.learning_rate, config.rmsprop_alpha, config.rmsprop_eps)
            epoch_loss += loss * len(batch)
        epoch_loss /= len(train_set)
        state.epoch += 1

        if state.epoch % config.eval_every == 0 or state.epoch == config.epochs:
            train_cer, train_loss_eval = _decode_all(model, train_set, config.batch_size)
            if val_set:
                val_cer, val_loss = _decode_all(model, val_set, config.batch_size)
            else:
                # No validation split at desk scale: mirror the train metrics.
                val_cer, val_loss = train_cer, train_loss_eval
            point = CurvePoint(state.epoch, epoch_loss, val_loss, train_cer, val_cer)
            curves.append(point)
            if progress is not None:
                progress(point, config.epochs)
            if out is not None:
                if val_cer <= state.best_val_cer:
                    state.best_val_cer = val_cer
                    save_model(model, out / "best.klch")
                    checkpoints["best"] = out / "best.klch"
                save_model(model, out / "last.klch")
                save_state(state, out / "last.state")
                checkpoints["last"] = out / "last.klch"
                checkpoints["state"] = out / "last.state"
                write_curves(curves, out / "curves.csv")
                checkpoints["curves"] = out / "curves.csv"

    if out is not None and "last" not in checkpoints:
        save_model(model, out / "last.klch")
        save_state(state, out / "last.state")
        write_curves(curves, out / "curves.csv")
        checkpoints.update(
            last=out / "last.klch", state=out / "last.state", curves=out / "curves.csv"
        )
    return model, curves, checkpoints


def fine_tune(
    model: CrnnModel,
    entries: list[ManifestEntry],
    config: TrainConfig,
    out_dir=None,
    progress=None,
) -> tuple[CrnnModel, list[CurvePoint], dict[str, Path]]:
    """Continue training an existing model on new labels."""
    bad = set()
    for entry in entries:
        for ch in entry.transcript:
            if ch not in model.charset:
                bad.add(ch)
    if bad:
        raise IngestionError(
            "transcripts contain out-of-charset characters: "
            + ", ".join(f"{c!r} (U+{ord(c):04X})" for c in sorted(bad))
        )
    model.metadata.setdefault("finetuned_from", model.metadata.get("name"))
    history = model.metadata.setdefault("finetune_history", [])
    history.append({"n_lines": len(entries), "epochs": config.epochs})
    return train(model, entries, config, out_dir=out_dir, progress=progress)
