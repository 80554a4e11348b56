"""CRNN assembly, model registry, and binary serialization.

Pipeline: conv stack (conv + GroupNorm + ReLU, optional max-pool per stage)
-> squeeze height -> [T,N,D] -> stacked bidirectional LSTMs -> linear ->
log-softmax. The conv stack must collapse the 80-pixel input height to 1.
"""

from __future__ import annotations

import json
import struct
import time
import warnings
import zlib
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .charset import Charset
from .ctc import greedy_decode
from .nn import layers
from .nn.tensor import ParamTensor

MODEL_MAGIC = b"KLCHMD01"
MODEL_SUFFIX = ".klch"
FORMAT_VERSION = 1

INPUT_HEIGHT = 80
INPUT_WIDTH = 760


class ConfigError(ValueError):
    pass


class ModelFormatError(ValueError):
    pass


class ModelCorruptionError(ModelFormatError):
    pass


@dataclass(frozen=True)
class ConvStage:
    out_channels: int
    kernel: tuple[int, int] = (3, 3)
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (1, 1)
    pool: tuple[int, int] | None = None  # kernel == stride
    gn_groups: int = 0  # 0 -> min(32, out_channels)

    def groups(self) -> int:
        return self.gn_groups or min(32, self.out_channels)


@dataclass(frozen=True)
class ArchConfig:
    stages: tuple[ConvStage, ...]
    rnn_hidden: int
    rnn_layers: int
    num_classes: int
    input_height: int = INPUT_HEIGHT
    input_width: int = INPUT_WIDTH
    gn_eps: float = 1e-5

    def geometry(self) -> tuple[int, int, int]:
        """(channels, height, width) after the conv stack; height must be 1."""
        c, h, w = 1, self.input_height, self.input_width
        for k, stage in enumerate(self.stages):
            kh, kw = stage.kernel
            sh, sw = stage.stride
            ph, pw = stage.padding
            if (h + 2 * ph - kh) % sh or (w + 2 * pw - kw) % sw:
                raise ConfigError(f"stage {k}: kernel does not tile {h}x{w}")
            h = (h + 2 * ph - kh) // sh + 1
            w = (w + 2 * pw - kw) // sw + 1
            if h < 1 or w < 1:
                raise ConfigError(f"stage {k}: geometry collapsed to {h}x{w}")
            if stage.out_channels % stage.groups():
                raise ConfigError(
                    f"stage {k}: groups {stage.groups()} does not divide "
                    f"{stage.out_channels} channels"
                )
            if stage.pool:
                qh, qw = stage.pool
                if h % qh or w % qw:
                    raise ConfigError(f"stage {k}: pool {stage.pool} does not tile {h}x{w}")
                h //= qh
                w //= qw
            c = stage.out_channels
        if h != 1:
            raise ConfigError(f"conv stack leaves height {h}, must collapse to 1")
        return c, h, w

    @property
    def seq_len(self) -> int:
        return self.geometry()[2]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stages"] = [asdict(s) for s in self.stages]
        return d

    @staticmethod
    def from_dict(d: dict) -> "ArchConfig":
        stages = tuple(
            ConvStage(
                out_channels=s["out_channels"],
                kernel=tuple(s["kernel"]),
                stride=tuple(s["stride"]),
                padding=tuple(s["padding"]),
                pool=tuple(s["pool"]) if s.get("pool") else None,
                gn_groups=s.get("gn_groups", 0),
            )
            for s in d["stages"]
        )
        return ArchConfig(
            stages=stages,
            rnn_hidden=d["rnn_hidden"],
            rnn_layers=d["rnn_layers"],
            num_classes=d["num_classes"],
            input_height=d.get("input_height", INPUT_HEIGHT),
            input_width=d.get("input_width", INPUT_WIDTH),
            gn_eps=d.get("gn_eps", 1e-5),
        )


def default_config(num_classes: int) -> ArchConfig:
    """Full-size architecture for the 80x760 line geometry; T = 190."""
    return ArchConfig(
        stages=(
            ConvStage(64, pool=(2, 2)),
            ConvStage(128, pool=(2, 2)),
            ConvStage(256),
            ConvStage(256, pool=(2, 1)),
            ConvStage(512),
            ConvStage(512, pool=(2, 1)),
            ConvStage(512, kernel=(5, 3), padding=(0, 1)),
        ),
        rnn_hidden=256,
        rnn_layers=2,
        num_classes=num_classes,
    )


def reduced_config(num_classes: int) -> ArchConfig:
    """Desk-scale architecture for smoke tests and fine-tune fixtures; T = 95."""
    return ArchConfig(
        stages=(
            ConvStage(8, pool=(4, 4)),
            ConvStage(16, pool=(4, 2)),
            ConvStage(16, kernel=(5, 3), padding=(0, 1)),
        ),
        rnn_hidden=48,
        rnn_layers=1,
        num_classes=num_classes,
    )


class CrnnModel:
    """A built CRNN with named parameters, its charset, and metadata."""

    def __init__(self, config: ArchConfig, charset: Charset, params: dict[str, ParamTensor],
                 metadata: dict | None = None):
        if config.num_classes != charset.size:
            raise ConfigError(
                f"num_classes {config.num_classes} != charset size {charset.size}"
            )
        self.config = config
        self.charset = charset
        self.params = params
        self.metadata = metadata or {}
        self.last_lines_per_sec: float | None = None

    # ------------------------------------------------------------ params

    def param_list(self) -> list[ParamTensor]:
        return [self.params[k] for k in sorted(self.params)]

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def astype(self, dtype) -> "CrnnModel":
        params = {k: p.astype(dtype) for k, p in self.params.items()}
        return CrnnModel(self.config, self.charset, params, dict(self.metadata))

    @property
    def dtype(self):
        return next(iter(self.params.values())).value.dtype

    # ----------------------------------------------------------- forward

    def forward(self, batch: np.ndarray, with_cache: bool = False):
        """batch: (N,1,H,W) -> log-probs (T,N,C). Optionally keep caches
        and the pre-softmax logits for training."""
        n = batch.shape[0]
        expect = (n, 1, self.config.input_height, self.config.input_width)
        if batch.shape != expect:
            raise layers.ShapeError(f"batch shape {batch.shape}, expected {expect}")
        x = batch.astype(self.dtype, copy=False)
        caches = []
        for k, stage in enumerate(self.config.stages):
            w = self.params[f"conv{k}.weight"].value
            b = self.params[f"conv{k}.bias"].value
            x, c_conv = layers.conv2d_forward(x, w, b, stage.stride, stage.padding)
            gamma = self.params[f"gn{k}.gamma"].value
            beta = self.params[f"gn{k}.beta"].value
            x, c_gn = layers.group_norm_forward(
                x, gamma, beta, stage.groups(), self.config.gn_eps
            )
            x, c_relu = layers.relu_forward(x)
            c_pool = None
            if stage.pool:
                x, c_pool = layers.maxpool2d_forward(x, stage.pool)
            caches.append((c_conv, c_gn, c_relu, c_pool))

        # (N,C,1,W) -> (T=W, N, C)
        conv_out_shape = x.shape
        seq = x[:, :, 0, :].transpose(2, 0, 1)
        rnn_caches = []
        for layer in range(self.config.rnn_layers):
            p = {
                key: self.params[f"rnn{layer}.{key}"].value
                for key in ("w_ih_f", "w_hh_f", "b_ih_f", "b_hh_f",
                            "w_ih_b", "w_hh_b", "b_ih_b", "b_hh_b")
            }
            seq, c_rnn = layers.bilstm_forward(seq, p)
            rnn_caches.append(c_rnn)

        logits, c_lin = layers.linear_forward(
            seq, self.params["head.weight"].value, self.params["head.bias"].value
        )
        log_probs, _ = layers.log_softmax_forward(logits)
        if with_cache:
            cache = (caches, conv_out_shape, rnn_caches, c_lin)
            return log_probs, cache
        return log_probs

    def backward(self, dlogits: np.ndarray, cache) -> None:
        """Backpropagate d(loss)/d(pre-softmax logits), accumulating grads.

        The CTC gradient is already with respect to the pre-softmax logits,
        so the log-softmax backward is intentionally not applied here.
        """
        caches, conv_out_shape, rnn_caches, c_lin = cache
        dseq, dw, db = layers.linear_backward(dlogits, c_lin)
        self.params["head.weight"].accumulate(dw)
        self.params["head.bias"].accumulate(db)

        for layer in reversed(range(self.config.rnn_layers)):
            dseq, grads = layers.bilstm_backward(dseq, rnn_caches[layer])
            for key, g in grads.items():
                self.params[f"rnn{layer}.{key}"].accumulate(g)

        dx = dseq.transpose(1, 2, 0)[:, :, None, :]
        dx = np.ascontiguousarray(dx).reshape(conv_out_shape)
        for k in reversed(range(len(self.config.stages))):
            stage = self.config.stages[k]
            c_conv, c_gn, c_relu, c_pool = caches[k]
            if c_pool is not None:
                dx = layers.maxpool2d_backward(dx, c_pool)
            dx = layers.relu_backward(dx, c_relu)
            dx, dgamma, dbeta = layers.group_norm_backward(dx, c_gn)
            self.params[f"gn{k}.gamma"].accumulate(dgamma)
            self.params[f"gn{k}.beta"].accumulate(dbeta)
            dx, dw, db = layers.conv2d_backward(dx, c_conv)
            self.params[f"conv{k}.weight"].accumulate(dw)
            self.params[f"conv{k}.bias"].accumulate(db)

    # --------------------------------------------------------------- ocr

    def ocr(self, line_images: list[np.ndarray]) -> list[tuple[str, float]]:
        """Recognize prepared 80x760 line images; order preserved.

        Records lines/sec in `last_lines_per_sec` for batches of 16+.
        """
        if not line_images:
            return []
        batch = np.stack(line_images).astype(self.dtype)[:, None, :, :]
        start = time.monotonic()
        log_probs = self.forward(batch)
        results = [
            greedy_decode(log_probs[:, i, :], self.charset)
            for i in range(batch.shape[0])
        ]
        elapsed = time.monotonic() - start
        if len(line_images) >= 16 and elapsed > 0:
            self.last_lines_per_sec = len(line_images) / elapsed
        return results


# ------------------------------------------------------------------ build


def _kaiming_uniform(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def build_model(config: ArchConfig, cs: Charset, seed: int = 0) -> CrnnModel:
    """Initialize a model deterministically from the seed."""
    config.geometry()  # validates
    rng = np.random.default_rng(seed)
    params: dict[str, ParamTensor] = {}

    def add(name, value):
        params[name] = ParamTensor(name, np.asarray(value, dtype=np.float64))

    cin = 1
    for k, stage in enumerate(config.stages):
        kh, kw = stage.kernel
        fan_in = cin * kh * kw
        add(f"conv{k}.weight", _kaiming_uniform(rng, (stage.out_channels, cin, kh, kw), fan_in))
        add(f"conv{k}.bias", np.zeros(stage.out_channels))
        add(f"gn{k}.gamma", np.ones(stage.out_channels))
        add(f"gn{k}.beta", np.zeros(stage.out_channels))
        cin = stage.out_channels

    h = config.rnn_hidden
    d = cin
    bound = 1.0 / np.sqrt(h)
    for layer in range(config.rnn_layers):
        in_dim = d if layer == 0 else 2 * h
        for suffix in ("f", "b"):
            add(f"rnn{layer}.w_ih_{suffix}", rng.uniform(-bound, bound, (4 * h, in_dim)))
            add(f"rnn{layer}.w_hh_{suffix}", rng.uniform(-bound, bound, (4 * h, h)))
            add(f"rnn{layer}.b_ih_{suffix}", rng.uniform(-bound, bound, 4 * h))
            add(f"rnn{layer}.b_hh_{suffix}", rng.uniform(-bound, bound, 4 * h))

    add("head.weight", _kaiming_uniform(rng, (config.num_classes, 2 * h), 2 * h))
    add("head.bias", np.zeros(config.num_classes))
    return CrnnModel(config, cs, params, metadata={"seed": seed})


# -------------------------------------------------------------- serialize


def _write_container(path, magic: bytes, header: dict, tensors: list[tuple[str, np.ndarray]],
                     dtype="<f4") -> None:
    header = dict(header)
    header["tensors"] = [[name, list(arr.shape)] for name, arr in tensors]
    header["dtype"] = dtype
    blob = json.dumps(header, ensure_ascii=False).encode("utf-8")
    payload = bytearray()
    payload += magic
    payload += struct.pack("<Q", len(blob))
    payload += blob
    for _, arr in tensors:
        payload += np.ascontiguousarray(arr, dtype=np.dtype(dtype)).tobytes()
    payload += struct.pack("<I", zlib.crc32(bytes(payload)))
    Path(path).write_bytes(bytes(payload))


def _read_container(path, magic: bytes) -> tuple[dict, list[np.ndarray]]:
    raw = Path(path).read_bytes()
    if len(raw) < len(magic) + 12 or raw[: len(magic)] != magic:
        raise ModelFormatError(f"{path}: bad magic")
    if zlib.crc32(raw[:-4]) != struct.unpack("<I", raw[-4:])[0]:
        raise ModelCorruptionError(f"{path}: checksum mismatch")
    offset = len(magic)
    (header_len,) = struct.unpack_from("<Q", raw, offset)
    offset += 8
    try:
        header = json.loads(raw[offset:offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"{path}: unreadable header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise ModelFormatError(f"{path}: unsupported format version")
    offset += header_len
    dtype = np.dtype(header.get("dtype", "<f4"))
    tensors = []
    for name, shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * dtype.itemsize
        if offset + nbytes > len(raw) - 4:
            raise ModelCorruptionError(f"{path}: tensor {name} exceeds file size")
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=offset).reshape(shape)
        tensors.append(arr.copy())
        offset += nbytes
    if offset != len(raw) - 4:
        raise ModelCorruptionError(f"{path}: trailing bytes after tensor data")
    return header, tensors


def read_model_header(path) -> dict:
    """Read only the JSON header of a model file (no tensor data)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MODEL_MAGIC))
        if magic != MODEL_MAGIC:
            raise ModelFormatError(f"{path}: bad magic")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        try:
            return json.loads(fh.read(header_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ModelFormatError(f"{path}: unreadable header: {exc}") from exc


def save_model(model: CrnnModel, path) -> None:
    header = {
        "format_version": FORMAT_VERSION,
        "name": model.metadata.get("name", Path(path).stem),
        "arch": model.config.to_dict(),
        "charset": [ord(c) for c in model.charset.chars],
        "metadata": model.metadata,
    }
    tensors = [(k, model.params[k].value) for k in sorted(model.params)]
    _write_container(path, MODEL_MAGIC, header, tensors, dtype="<f4")


def load_model(path) -> CrnnModel:
    header, arrays = _read_container(path, MODEL_MAGIC)
    config = ArchConfig.from_dict(header["arch"])
    cs = Charset(tuple(chr(cp) for cp in header["charset"]))
    params = {}
    for (name, shape), arr in zip(header["tensors"], arrays):
        params[name] = ParamTensor(name, arr.astype(np.float64))
    model = CrnnModel(config, cs, params, header.get("metadata", {}))
    model.metadata.setdefault("name", header.get("name"))
    return model


# --------------------------------------------------------------- registry


def list_available_models(registry_dir) -> list[str]:
    """Names (file stems) of valid model files in the registry, sorted."""
    registry = Path(registry_dir)
    if not registry.is_dir():
        raise IOError(f"registry directory {registry} does not exist")
    names = []
    for entry in sorted(registry.iterdir()):
        if not entry.is_file() or entry.suffix != MODEL_SUFFIX:
            continue
        try:
            with open(entry, "rb") as fh:
                if fh.read(len(MODEL_MAGIC)) != MODEL_MAGIC:
                    raise ModelFormatError("bad magic")
        except (OSError, ModelFormatError) as exc:
            warnings.warn(f"skipping {entry.name}: {exc}")
            continue
        names.append(entry.stem)
    return sorted(names)


def load_ocr_model(name: str, registry_dir) -> CrnnModel:
    path = Path(registry_dir) / f"{name}{MODEL_SUFFIX}"
    if not path.is_file():
        available = list_available_models(registry_dir)
        raise FileNotFoundError(
            f"model {name!r} not in registry; available: {available}"
        )
    return load_model(path)


def publish_model(model: CrnnModel, name: str, registry_dir) -> Path:
    """Atomically place a model file into the registry."""
    import os
    import tempfile

    registry = Path(registry_dir)
    registry.mkdir(parents=True, exist_ok=True)
    model.metadata["name"] = name
    fd, tmp = tempfile.mkstemp(dir=registry, suffix=".tmp")
    os.close(fd)
    save_model(model, tmp)
    target = registry / f"{name}{MODEL_SUFFIX}"
    os.replace(tmp, target)
    return target
