"""Binary checkpoint format.

Layout::

    b"CHNKPOOL"                 8 bytes magic
    version                     uint32 little-endian (currently 1)
    metadata length             uint64 little-endian
    metadata                    UTF-8 JSON: model config, vocabulary, tensor index
    payload                     float64 little-endian buffers in index order

Each index entry is ``{"name", "shape", "offset", "trainable"}`` with
``offset`` in bytes from the start of the payload.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .autodiff import Parameter, Tensor
from .errors import CheckpointVersionError, ConfigError, CorruptCheckpointError, NotACheckpointError, VocabFormatError
from .model import DocumentClassifier, ModelConfig
from .tokenizer import Vocabulary

MAGIC = b"CHNKPOOL"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sIQ")


def to_bytes(model: DocumentClassifier) -> bytes:
    index = []
    buffers = []
    offset = 0
    for name, p in model.params.items():
        buf = np.ascontiguousarray(p.tensor.data, dtype="<f8").tobytes()
        index.append({"name": name, "shape": list(p.tensor.shape), "offset": offset, "trainable": p.trainable})
        buffers.append(buf)
        offset += len(buf)
    meta = {
        "config": model.config.to_dict(),
        "vocab": list(model.vocab.tokens),
        "tensors": index,
        "payload_bytes": offset,
    }
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    return _HEADER.pack(MAGIC, FORMAT_VERSION, len(blob)) + blob + b"".join(buffers)


def save_checkpoint(model: DocumentClassifier, path: str | Path) -> None:
    Path(path).write_bytes(to_bytes(model))


def from_bytes(raw: bytes) -> DocumentClassifier:
    if len(raw) < _HEADER.size or raw[:8] != MAGIC:
        raise NotACheckpointError("missing CHNKPOOL magic")
    _, version, meta_len = _HEADER.unpack_from(raw)
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"checkpoint format version {version}, expected {FORMAT_VERSION}")
    start = _HEADER.size
    if start + meta_len > len(raw):
        raise CorruptCheckpointError("metadata block runs past end of file")
    try:
        meta = json.loads(raw[start:start + meta_len].decode("utf-8"))
        entries = meta["tensors"]
        payload_bytes = int(meta["payload_bytes"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpointError(f"unreadable metadata: {exc}") from None
    payload = raw[start + meta_len:]
    if len(payload) != payload_bytes:
        raise CorruptCheckpointError(f"payload is {len(payload)} bytes, index expects {payload_bytes}")
    try:
        config = ModelConfig.from_dict(meta["config"])
        vocab = Vocabulary.from_tokens(meta["vocab"])
    except (ConfigError, VocabFormatError, KeyError) as exc:
        raise CorruptCheckpointError(f"invalid embedded config or vocabulary: {exc}") from None
    params: dict[str, Parameter] = {}
    expected = 0
    for entry in entries:
        try:
            name, shape, offset = entry["name"], tuple(int(n) for n in entry["shape"]), int(entry["offset"])
        except (KeyError, TypeError, ValueError):
            raise CorruptCheckpointError(f"malformed index entry {entry!r}") from None
        n_bytes = 8 * int(np.prod(shape, dtype=np.int64))
        if name in params or offset != expected or offset + n_bytes > len(payload):
            raise CorruptCheckpointError(f"bad index entry for {name!r}")
        data = np.frombuffer(payload, dtype="<f8", count=n_bytes // 8, offset=offset).astype(np.float64).reshape(shape)
        params[name] = Parameter(name, Tensor(data), bool(entry.get("trainable", True)))
        expected = offset + n_bytes
    if expected != payload_bytes:
        raise CorruptCheckpointError("index does not cover the payload")
    reference = DocumentClassifier.build(config, vocab, seed=0)
    ref_shapes = {k: p.tensor.shape for k, p in reference.params.items()}
    if ref_shapes != {k: p.tensor.shape for k, p in params.items()}:
        raise CorruptCheckpointError("tensor set does not match the embedded model config")
    return DocumentClassifier(config, vocab, params)


def load_checkpoint(path: str | Path) -> DocumentClassifier:
    return from_bytes(Path(path).read_bytes())
