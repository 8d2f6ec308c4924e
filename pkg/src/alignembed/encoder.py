"""Sentence encoder: token embeddings, pre-norm transformer layers, masked mean pooling."""

from __future__ import annotations

import json
import math
import os
import struct
import tempfile
import zlib
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .textproc import DEFAULT_MAX_LEN, TokenizedBatch, Vocab, tokenize_batch

MAGIC = b"BTN1"
FORMAT_VERSION = 1
POOLING_SOURCES = ("embeddings", "layer_output")


class CheckpointError(Exception):
    pass


class IntegrityError(CheckpointError):
    pass


class DimensionMismatchError(CheckpointError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 128
    max_len: int = DEFAULT_MAX_LEN
    seed: int = 0

    def __post_init__(self):
        for name in ("vocab_size", "d_model", "n_heads", "d_ff", "max_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.n_layers < 0:
            raise ValueError("n_layers must be >= 0")
        if self.d_model % self.n_heads:
            raise ValueError(f"n_heads={self.n_heads} does not divide d_model={self.d_model}")

    @classmethod
    def paper_scale(cls, vocab_size: int, seed: int = 0) -> "EncoderConfig":
        # width of the flan-t5-small embedder; depth/ffn follow that model too
        return cls(vocab_size, d_model=512, n_layers=8, n_heads=8, d_ff=1024, seed=seed)

    def to_dict(self) -> dict:
        return asdict(self)


def param_shapes(cfg: EncoderConfig) -> dict[str, tuple[int, ...]]:
    """Registry layout in canonical order."""
    d, f = cfg.d_model, cfg.d_ff
    shapes: dict[str, tuple[int, ...]] = {"embed": (cfg.vocab_size, d)}
    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        shapes.update({
            p + "ln1.gain": (d,), p + "ln1.bias": (d,),
            p + "attn.wq": (d, d), p + "attn.wk": (d, d),
            p + "attn.wv": (d, d), p + "attn.wo": (d, d),
            p + "ln2.gain": (d,), p + "ln2.bias": (d,),
            p + "ffn.w1": (d, f), p + "ffn.b1": (f,),
            p + "ffn.w2": (f, d), p + "ffn.b2": (d,),
        })
    return shapes


@dataclass
class EncoderParams:
    config: EncoderConfig
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors)

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def equals(self, other: "EncoderParams") -> bool:
        """Bitwise equality of config and every tensor."""
        if self.config != other.config or list(self.tensors) != list(other.tensors):
            return False
        return all(self.tensors[k].tobytes() == other.tensors[k].tobytes() for k in self.tensors)


def init_params(cfg: EncoderConfig) -> EncoderParams:
    """Glorot-uniform matrices; layer-norm gains 1, every bias 0."""
    rng = np.random.default_rng(cfg.seed)
    tensors = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".gain"):
            tensors[name] = np.ones(shape)
        elif len(shape) == 1:
            tensors[name] = np.zeros(shape)
        else:
            bound = math.sqrt(6.0 / (shape[0] + shape[1]))
            tensors[name] = rng.uniform(-bound, bound, size=shape)
    return EncoderParams(cfg, tensors)


def sinusoidal_positions(length: int, d_model: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    rates = np.exp(-math.log(10000.0) * (np.arange(0, d_model, 2) / d_model))
    pe = np.zeros((length, d_model))
    pe[:, 0::2] = np.sin(pos * rates)
    pe[:, 1::2] = np.cos(pos * rates[: d_model // 2])
    return pe


def default_pooling(cfg: EncoderConfig) -> str:
    return "layer_output" if cfg.n_layers > 0 else "embeddings"


def bind(graph: T.Graph, params: EncoderParams, trainable: bool = True) -> dict[str, T.Tensor]:
    make = graph.param if trainable else graph.constant
    return {name: make(arr, name=name) for name, arr in params.tensors.items()}


def _attention(g, x, w, prefix, n_heads, key_bias):
    b, t, d = x.shape
    dh = d // n_heads

    def heads(z):
        return T.transpose(T.reshape(z, (b, t, n_heads, dh)), (0, 2, 1, 3))

    q = heads(T.matmul(x, w[prefix + "wq"]))
    k = heads(T.matmul(x, w[prefix + "wk"]))
    v = heads(T.matmul(x, w[prefix + "wv"]))
    scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / math.sqrt(dh))
    att = T.softmax(T.add(scores, g.constant(key_bias)), axis=-1)
    ctx = T.reshape(T.transpose(T.matmul(att, v), (0, 2, 1, 3)), (b, t, d))
    return T.matmul(ctx, w[prefix + "wo"])


def forward(graph: T.Graph, weights: dict[str, T.Tensor], cfg: EncoderConfig,
            batch: TokenizedBatch, pooling_source: Optional[str] = None) -> T.Tensor:
    """Build the encoder graph and return unit-norm sentence vectors [B, d_model]."""
    source = pooling_source or default_pooling(cfg)
    if source not in POOLING_SOURCES:
        raise ValueError(f"pooling_source must be one of {POOLING_SOURCES}")
    ids, mask = batch.ids, batch.mask
    if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
        raise IndexError(f"token id out of range [0, {cfg.vocab_size})")
    if np.any(mask.sum(axis=1) == 0):
        raise T.DegenerateMaskError("a mask row has no unmasked position")

    tokens = T.embedding(weights["embed"], ids)
    if source == "embeddings":
        return T.l2_normalize_rows(T.mean_pool_masked(tokens, mask))

    _, length = ids.shape
    x = T.add(tokens, graph.constant(sinusoidal_positions(length, cfg.d_model)))
    key_bias = np.where(mask > 0, 0.0, T.MASK_FILL)[:, None, None, :]
    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        h = T.layer_norm(x, weights[p + "ln1.gain"], weights[p + "ln1.bias"])
        x = T.add(x, _attention(graph, h, weights, p + "attn.", cfg.n_heads, key_bias))
        h = T.layer_norm(x, weights[p + "ln2.gain"], weights[p + "ln2.bias"])
        h = T.gelu(T.add(T.matmul(h, weights[p + "ffn.w1"]), weights[p + "ffn.b1"]))
        x = T.add(x, T.add(T.matmul(h, weights[p + "ffn.w2"]), weights[p + "ffn.b2"]))
    return T.l2_normalize_rows(T.mean_pool_masked(x, mask))


def encode_batch(params: EncoderParams, batch: TokenizedBatch,
                 pooling_source: Optional[str] = None) -> np.ndarray:
    """Inference-only forward pass; returns a [B, d_model] array of unit rows."""
    g = T.Graph(params.config.seed)
    out = forward(g, bind(g, params, trainable=False), params.config, batch, pooling_source)
    return out.values


class SentenceEncoder:
    """Params plus vocabulary: text in, unit vectors out."""

    def __init__(self, params: EncoderParams, vocab: Vocab,
                 pooling_source: Optional[str] = None, turkish_casing: bool = False):
        if len(vocab) != params.config.vocab_size:
            raise DimensionMismatchError(
                f"vocab has {len(vocab)} entries, encoder expects {params.config.vocab_size}")
        self.params = params
        self.vocab = vocab
        self.pooling_source = pooling_source
        self.turkish_casing = turkish_casing

    def tokenize(self, sentences: Sequence[str]) -> TokenizedBatch:
        return tokenize_batch(self.vocab, sentences, self.params.config.max_len,
                              self.turkish_casing)

    def encode(self, sentences: Sequence[str], chunk_size: int = 256) -> np.ndarray:
        if not sentences:
            return np.zeros((0, self.params.config.d_model))
        parts = [encode_batch(self.params, self.tokenize(sentences[i:i + chunk_size]),
                              self.pooling_source)
                 for i in range(0, len(sentences), chunk_size)]
        return np.concatenate(parts, axis=0)


# ---------------------------------------------------------------------------
# checkpoint file: MAGIC | u32 header length | JSON header | f64 LE payload | u32 CRC
# ---------------------------------------------------------------------------

def _serialize(params: EncoderParams) -> bytes:
    manifest, chunks, offset = [], [], 0
    for name, arr in params.tensors.items():
        if not np.all(np.isfinite(arr)):
            raise CheckpointError(f"refusing to save non-finite tensor {name!r}")
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"version": FORMAT_VERSION, "config": params.config.to_dict(),
                         "tensors": manifest, "payload_bytes": offset},
                        sort_keys=True).encode("utf-8")
    body = header + b"".join(chunks)
    return MAGIC + struct.pack("<I", len(header)) + body + struct.pack("<I", zlib.crc32(body))


def atomic_write_bytes(path, data: bytes) -> None:
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(params: EncoderParams, path) -> None:
    expected = param_shapes(params.config)
    if list(expected) != list(params.tensors):
        raise CheckpointError("parameter registry is incomplete or out of order")
    for name, shape in expected.items():
        if params.tensors[name].shape != shape:
            raise DimensionMismatchError(f"{name}: shape {params.tensors[name].shape} != {shape}")
    atomic_write_bytes(path, _serialize(params))


def load_checkpoint(path, expect: Optional[EncoderConfig] = None) -> EncoderParams:
    """Read a checkpoint, verifying magic, CRC, version and every tensor shape.

    If ``expect`` is given, all of its dimensions must match the stored config.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(MAGIC) + 8 or data[:4] != MAGIC:
        raise IntegrityError(f"{path}: not a checkpoint (bad magic or truncated)")
    (hlen,) = struct.unpack_from("<I", data, 4)
    body = data[8:-4]
    if hlen > len(body):
        raise IntegrityError(f"{path}: truncated header")
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(body) != crc:
        raise IntegrityError(f"{path}: CRC mismatch (corrupt or truncated file)")
    try:
        header = json.loads(body[:hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"{path}: unreadable header") from exc
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {header.get('version')}")
    cfg = EncoderConfig(**header["config"])
    if expect is not None:
        for key in ("vocab_size", "d_model", "n_layers", "n_heads", "d_ff"):
            if getattr(expect, key) != getattr(cfg, key):
                raise DimensionMismatchError(
                    f"{key}: checkpoint has {getattr(cfg, key)}, expected {getattr(expect, key)}")
    payload = body[hlen:]
    if len(payload) != header["payload_bytes"]:
        raise IntegrityError(f"{path}: payload length mismatch")
    shapes = param_shapes(cfg)
    names = [e["name"] for e in header["tensors"]]
    if names != list(shapes):
        raise DimensionMismatchError(f"{path}: tensor manifest does not match config")
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        if shape != shapes[entry["name"]]:
            raise DimensionMismatchError(f"{entry['name']}: stored {shape}, config implies "
                                         f"{shapes[entry['name']]}")
        count = int(np.prod(shape))
        start = entry["offset"]
        if start + 8 * count > len(payload):
            raise IntegrityError(f"{path}: tensor {entry['name']} overruns payload")
        tensors[entry["name"]] = np.frombuffer(
            payload, dtype="<f8", count=count, offset=start).reshape(shape).astype(np.float64)
    return EncoderParams(cfg, tensors)
