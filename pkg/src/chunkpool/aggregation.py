"""Pooling functions from a sequence of per-chunk CLS embeddings to a single
fixed-width document vector.

The batched entry point :func:`pool` takes a ``B×P×d`` stack of CLS sequences
with a ``B×P`` mask (documents shorter than ``P`` are right-padded with zero
rows). The single-sequence functions (``f_mean`` etc.) take a ``P×d`` tensor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import INIT_STD, encoder_layer, init_layer, scope
from .errors import ConfigError, DimensionError, EmptyReductionError

KINDS = ("mean", "identity", "transformer", "lstm")


@dataclass(frozen=True)
class AggregatorConfig:
    kind: str = "mean"
    max_chunks: int | None = None
    n_heads: int = 2
    ffn_dim: int | None = None
    max_positions: int = 64
    dropout_p: float = 0.1

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown aggregator {self.kind!r}; expected one of {KINDS}")
        if self.kind == "identity" and (self.max_chunks is None or self.max_chunks < 1):
            raise ConfigError("identity aggregator needs a positive max_chunks")
        if self.n_heads < 1 or self.max_positions < 1:
            raise ConfigError("aggregator n_heads and max_positions must be positive")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p {self.dropout_p} outside [0, 1)")

    def out_width(self, d: int) -> int:
        return self.max_chunks * d if self.kind == "identity" else d


def init_aggregator(cfg: AggregatorConfig, d: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    if cfg.kind == "transformer":
        if d % cfg.n_heads:
            raise ConfigError(f"hidden size {d} not divisible by {cfg.n_heads} pooling heads")
        out = {"agg.transformer.position": rng.normal(0.0, INIT_STD, (cfg.max_positions, d))}
        out.update(init_layer("agg.transformer.layer", d, cfg.ffn_dim or 4 * d, rng))
        return out
    if cfg.kind == "lstm":
        bound = 1.0 / math.sqrt(d)
        bias = np.zeros(4 * d)
        bias[d:2 * d] = 1.0  # forget gate starts open
        return {
            "agg.lstm.w": rng.uniform(-bound, bound, (d, 4 * d)),
            "agg.lstm.u": rng.uniform(-bound, bound, (d, 4 * d)),
            "agg.lstm.b": bias,
        }
    return {}


def _as_rows(s: Tensor) -> Tensor:
    if s.ndim != 2:
        raise DimensionError(f"CLS sequence must be P×d, got {s.shape}")
    if s.shape[0] == 0:
        raise EmptyReductionError("empty CLS sequence")
    return s


# ---------------------------------------------------------------------------
# single-sequence forms


def f_mean(s: Tensor) -> Tensor:
    return ad.reduce("mean", _as_rows(s), axis=0)


def f_identity(s: Tensor, max_chunks: int) -> tuple[Tensor, bool]:
    """Concatenate the first ``max_chunks`` rows, zero-padding short sequences.

    Returns the ``max_chunks·d`` vector and whether rows were dropped.
    """
    s = _as_rows(s)
    out, truncated = _identity(ad.reshape(s, (1,) + s.shape), max_chunks)
    return ad.reshape(out, (out.shape[1],)), bool(truncated[0])


def f_transformer(s: Tensor, p: Mapping[str, Tensor], n_heads: int = 2,
                  mode: str = "eval", rng: np.random.Generator | None = None,
                  dropout_p: float = 0.0) -> Tensor:
    """``p`` holds ``position`` and ``layer.*`` (the ``agg.transformer`` scope)."""
    s = _as_rows(s)
    out = _transformer(ad.reshape(s, (1,) + s.shape), np.ones((1, s.shape[0])), p,
                       n_heads, dropout_p, mode, rng)
    return ad.reshape(out, (s.shape[1],))


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, p: Mapping[str, Tensor]) -> tuple[Tensor, Tensor]:
    """One step; ``p`` holds ``w`` (d×4d), ``u`` (d×4d), ``b`` (4d), gate order i, f, o, g.

    Accepts single vectors (``d``) or row batches (``B×d``).
    """
    single = x.ndim == 1
    if single:
        x, h, c = (ad.reshape(t, (1, t.shape[0])) for t in (x, h, c))
    d = h.shape[-1]
    if x.shape[-1] != p["w"].shape[0] or c.shape != h.shape or p["u"].shape[0] != d or p["w"].shape[1] != 4 * d:
        raise DimensionError(f"lstm_cell widths: x {x.shape}, h {h.shape}, c {c.shape}, w {p['w'].shape}")
    z = ad.add(ad.add(ad.matmul(x, p["w"]), ad.matmul(h, p["u"])), p["b"])
    i, f, o, g = (ad.index(z, (slice(None), slice(k * d, (k + 1) * d))) for k in range(4))
    i, f, o, g = ad.sigmoid(i), ad.sigmoid(f), ad.sigmoid(o), ad.tanh(g)
    c_new = ad.add(ad.mul(f, c), ad.mul(i, g))
    h_new = ad.mul(o, ad.tanh(c_new))
    if single:
        return ad.reshape(h_new, (d,)), ad.reshape(c_new, (d,))
    return h_new, c_new


def f_lstm(s: Tensor, p: Mapping[str, Tensor]) -> Tensor:
    """Final hidden state of a left-to-right LSTM; ``p`` is the ``agg.lstm`` scope."""
    s = _as_rows(s)
    out = _lstm(ad.reshape(s, (1,) + s.shape), np.ones((1, s.shape[0])), p)
    return ad.reshape(out, (out.shape[1],))


# ---------------------------------------------------------------------------
# batched forms


def _identity(x: Tensor, m: int) -> tuple[Tensor, np.ndarray]:
    b, p, d = x.shape
    if p < m:
        x = ad.concat([x, Tensor(np.zeros((b, m - p, d)))], axis=1)
    elif p > m:
        x = ad.index(x, (slice(None), slice(0, m)))
    return ad.reshape(x, (b, m * d)), np.full(b, p > m)


def _transformer(x: Tensor, mask: np.ndarray, p: Mapping[str, Tensor], n_heads: int,
                 dropout_p: float, mode: str, rng) -> Tensor:
    n_pos = x.shape[1]
    if n_pos > p["position"].shape[0]:
        raise ConfigError(f"{n_pos} chunks exceed the pooling layer's {p['position'].shape[0]} positions")
    x = ad.add(x, ad.index(p["position"], slice(0, n_pos)))
    y = encoder_layer(x, mask, scope(p, "layer"), n_heads, dropout_p, mode, rng)
    return ad.reduce("max", y, axis=1, mask=mask)


def _lstm(x: Tensor, mask: np.ndarray, p: Mapping[str, Tensor]) -> Tensor:
    b, n_pos, _ = x.shape
    d = p["u"].shape[0]
    h = Tensor(np.zeros((b, d)))
    c = Tensor(np.zeros((b, d)))
    for t in range(n_pos):
        h_new, c_new = lstm_cell(ad.index(x, (slice(None), t)), h, c, p)
        live = mask[:, t].astype(bool)
        if live.all():
            h, c = h_new, c_new
        else:
            # finished sequences carry their state forward unchanged
            keep = Tensor(np.repeat(live[:, None], d, axis=1).astype(np.float64))
            stay = Tensor(1.0 - keep.data)
            h = ad.add(ad.mul(h_new, keep), ad.mul(h, stay))
            c = ad.add(ad.mul(c_new, keep), ad.mul(c, stay))
    return h


def pool(cfg: AggregatorConfig, x: Tensor, mask, params: Mapping[str, Tensor],
         mode: str = "eval", rng: np.random.Generator | None = None) -> tuple[Tensor, np.ndarray]:
    """Pool a ``B×P×d`` CLS stack; returns ``B×w`` vectors and per-document truncation flags."""
    mask = np.asarray(mask)
    if x.ndim != 3 or mask.shape != x.shape[:2]:
        raise DimensionError(f"pool expects B×P×d with B×P mask, got {x.shape} and {mask.shape}")
    if x.shape[1] == 0 or not mask.any(axis=1).all():
        raise EmptyReductionError("document with an empty CLS sequence")
    no_trunc = np.zeros(x.shape[0], dtype=bool)
    if cfg.kind == "mean":
        return ad.reduce("mean", x, axis=1, mask=mask), no_trunc
    if cfg.kind == "identity":
        out, _ = _identity(x, cfg.max_chunks)
        return out, mask.sum(axis=1) > cfg.max_chunks
    if cfg.kind == "transformer":
        return _transformer(x, mask, scope(params, "agg.transformer"), cfg.n_heads,
                            cfg.dropout_p, mode, rng), no_trunc
    return _lstm(x, mask, scope(params, "agg.lstm")), no_trunc
