"""Post-norm BERT-style transformer encoder applied independently to each chunk.

All functions accept either one chunk (``ℓ×d`` activations, ``ℓ`` mask) or a
stack of chunks (``N×ℓ×d``, ``N×ℓ``); attention never crosses chunks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .chunker import ChunkedDocument
from .errors import ConfigError

INIT_STD = 0.02


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    hidden: int = 64
    n_layers: int = 2
    n_heads: int = 2
    ffn_dim: int | None = None
    max_positions: int = 512
    dropout_p: float = 0.1

    def __post_init__(self) -> None:
        if self.ffn_dim is None:
            object.__setattr__(self, "ffn_dim", 4 * self.hidden)
        if min(self.vocab_size, self.hidden, self.n_layers, self.n_heads, self.ffn_dim, self.max_positions) < 1:
            raise ConfigError(f"encoder sizes must be positive: {self}")
        if self.hidden % self.n_heads:
            raise ConfigError(f"hidden size {self.hidden} not divisible by {self.n_heads} heads")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p {self.dropout_p} outside [0, 1)")


@dataclass
class ChunkEncoding:
    token_reps: Tensor
    cls: Tensor


def scope(params: Mapping[str, Tensor], prefix: str) -> dict[str, Tensor]:
    """View of ``params`` under ``prefix.`` with the prefix stripped."""
    head = prefix + "."
    return {k[len(head):]: v for k, v in params.items() if k.startswith(head)}


def init_layer(prefix: str, d: int, ffn: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for proj in ("q", "k", "v", "o"):
        out[f"{prefix}.attn.w{proj}"] = rng.normal(0.0, INIT_STD, (d, d))
        out[f"{prefix}.attn.b{proj}"] = np.zeros(d)
    out[f"{prefix}.ln1.gamma"] = np.ones(d)
    out[f"{prefix}.ln1.beta"] = np.zeros(d)
    out[f"{prefix}.ffn.w1"] = rng.normal(0.0, INIT_STD, (d, ffn))
    out[f"{prefix}.ffn.b1"] = np.zeros(ffn)
    out[f"{prefix}.ffn.w2"] = rng.normal(0.0, INIT_STD, (ffn, d))
    out[f"{prefix}.ffn.b2"] = np.zeros(d)
    out[f"{prefix}.ln2.gamma"] = np.ones(d)
    out[f"{prefix}.ln2.beta"] = np.zeros(d)
    return out


def init_encoder(cfg: EncoderConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    d = cfg.hidden
    out = {
        "embeddings.token": rng.normal(0.0, INIT_STD, (cfg.vocab_size, d)),
        "embeddings.position": rng.normal(0.0, INIT_STD, (cfg.max_positions, d)),
    }
    for k in range(1, cfg.n_layers + 1):
        out.update(init_layer(f"encoder.layer{k}", d, cfg.ffn_dim, rng))
    return out


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return ad.add(ad.matmul(x, w), b)


def multi_head_self_attention(x: Tensor, mask, p: Mapping[str, Tensor], n_heads: int,
                              n_queries: int | None = None) -> Tensor:
    """``p`` holds ``attn.{wq,bq,wk,bk,wv,bv,wo,bo}``; ``mask`` marks live key positions.

    ``n_queries`` restricts the output to the first query rows (keys and
    values still span the whole chunk).
    """
    single = x.ndim == 2
    if single:
        x = ad.reshape(x, (1,) + x.shape)
    n, length, d = x.shape
    n_q = length if n_queries is None else n_queries
    if d % n_heads:
        raise ConfigError(f"hidden size {d} not divisible by {n_heads} heads")
    dh = d // n_heads
    key_mask = np.asarray(mask).reshape(n, 1, 1, length)

    def heads(t: Tensor) -> Tensor:
        return ad.transpose(ad.reshape(t, (n, t.shape[1], n_heads, dh)), (0, 2, 1, 3))

    xq = x if n_q == length else ad.index(x, (slice(None), slice(0, n_q)))
    q = heads(linear(xq, p["attn.wq"], p["attn.bq"]))
    k = heads(linear(x, p["attn.wk"], p["attn.bk"]))
    v = heads(linear(x, p["attn.wv"], p["attn.bv"]))
    scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    attn = ad.softmax_masked(scores, key_mask)
    ctx = ad.reshape(ad.transpose(ad.matmul(attn, v), (0, 2, 1, 3)), (n, n_q, d))
    out = linear(ctx, p["attn.wo"], p["attn.bo"])
    return ad.reshape(out, (n_q, d)) if single else out


def feed_forward(x: Tensor, p: Mapping[str, Tensor]) -> Tensor:
    return linear(ad.gelu(linear(x, p["ffn.w1"], p["ffn.b1"])), p["ffn.w2"], p["ffn.b2"])


def encoder_layer(x: Tensor, mask, p: Mapping[str, Tensor], n_heads: int,
                  dropout_p: float = 0.0, mode: str = "eval",
                  rng: np.random.Generator | None = None, n_queries: int | None = None) -> Tensor:
    """Post-norm layer. With ``n_queries`` only the first rows are computed,
    which equals slicing the full output."""
    attn = ad.dropout(multi_head_self_attention(x, mask, p, n_heads, n_queries), dropout_p, mode, rng)
    if n_queries is not None and n_queries != x.shape[-2]:
        x = ad.index(x, (Ellipsis, slice(0, n_queries), slice(None)))
    y = ad.layer_norm(ad.add(x, attn), p["ln1.gamma"], p["ln1.beta"])
    ffn = ad.dropout(feed_forward(y, p), dropout_p, mode, rng)
    return ad.layer_norm(ad.add(y, ffn), p["ln2.gamma"], p["ln2.beta"])


def embed(ids, mask, params: Mapping[str, Tensor]) -> Tensor:
    """Token plus position embeddings; rows at PAD positions are zeroed."""
    ids = np.asarray(ids)
    mask = np.asarray(mask)
    length = ids.shape[-1]
    x = ad.add(ad.embedding_lookup(params["embeddings.token"], ids),
               ad.index(params["embeddings.position"], slice(0, length)))
    live = np.broadcast_to(mask[..., None].astype(np.float64), x.shape)
    return ad.mul(x, Tensor(live))


def encode_chunks(ids, mask, params: Mapping[str, Tensor], cfg: EncoderConfig,
                  mode: str = "eval", rng: np.random.Generator | None = None,
                  cls_only: bool = False) -> Tensor:
    """Token representations for a stack of chunks, ``N×ℓ×d``.

    With ``cls_only`` the top layer computes just row 0, giving ``N×1×d``.
    """
    ids = np.atleast_2d(np.asarray(ids))
    mask = np.atleast_2d(np.asarray(mask))
    if ids.shape[-1] > cfg.max_positions:
        raise ConfigError(f"chunk length {ids.shape[-1]} exceeds max_positions {cfg.max_positions}")
    x = embed(ids, mask, params)
    for k in range(1, cfg.n_layers + 1):
        rows = 1 if cls_only and k == cfg.n_layers else None
        x = encoder_layer(x, mask, scope(params, f"encoder.layer{k}"), cfg.n_heads,
                          cfg.dropout_p, mode, rng, rows)
    return x


def encode_chunk(ids, mask, params: Mapping[str, Tensor], cfg: EncoderConfig,
                 mode: str = "eval", rng: np.random.Generator | None = None) -> ChunkEncoding:
    reps = encode_chunks(np.asarray(ids)[None], np.asarray(mask)[None], params, cfg, mode, rng)
    reps = ad.index(reps, 0)
    return ChunkEncoding(reps, ad.index(reps, 0))


def encode_document(doc: ChunkedDocument, params: Mapping[str, Tensor], cfg: EncoderConfig,
                    mode: str = "eval", rng: np.random.Generator | None = None) -> Tensor:
    """CLS embeddings of every chunk in order, as a ``P×d`` tensor."""
    reps = encode_chunks(doc.ids, doc.mask, params, cfg, mode, rng, cls_only=True)
    return ad.index(reps, (slice(None), 0))
