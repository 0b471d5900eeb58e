"""Split a token sequence into fixed-length ``[CLS] ... [SEP] [PAD]*`` chunks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .tokenizer import TokenSequence, Vocabulary


@dataclass(frozen=True)
class ChunkingConfig:
    content_len: int = 510
    max_chunks: int | None = None

    def __post_init__(self) -> None:
        if self.content_len < 1:
            raise ConfigError(f"content_len must be positive, got {self.content_len}")
        if self.max_chunks is not None and self.max_chunks < 1:
            raise ConfigError(f"max_chunks must be positive, got {self.max_chunks}")

    @property
    def total_len(self) -> int:
        # content plus the [CLS]/[SEP] wrapper
        return self.content_len + 2


@dataclass(frozen=True)
class ChunkedDocument:
    ids: np.ndarray  # (n_chunks, total_len) int64
    mask: np.ndarray  # (n_chunks, total_len) int8
    truncated: bool = False

    @property
    def n_chunks(self) -> int:
        return self.ids.shape[0]

    def content(self) -> list[int]:
        """Content ids in order, with specials and padding stripped."""
        out: list[int] = []
        for row, m in zip(self.ids, self.mask):
            live = row[m.astype(bool)]
            out.extend(int(t) for t in live[1:-1])
        return out


def chunk_document(tokens: TokenSequence, cfg: ChunkingConfig, vocab: Vocabulary) -> ChunkedDocument:
    content = list(tokens.ids)
    lc = cfg.content_len
    n = max(1, -(-len(content) // lc))
    truncated = False
    if cfg.max_chunks is not None and n > cfg.max_chunks:
        n, truncated = cfg.max_chunks, True
    ids = np.full((n, cfg.total_len), vocab.pad_id, dtype=np.int64)
    mask = np.zeros((n, cfg.total_len), dtype=np.int8)
    for k in range(n):
        part = content[k * lc:(k + 1) * lc]
        ids[k, 0] = vocab.cls_id
        ids[k, 1:1 + len(part)] = part
        ids[k, 1 + len(part)] = vocab.sep_id
        mask[k, :2 + len(part)] = 1
    return ChunkedDocument(ids, mask, truncated)
