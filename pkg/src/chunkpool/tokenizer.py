"""WordPiece tokenization: lowercase/punctuation pre-split, then greedy
longest-match-first subword segmentation."""
from __future__ import annotations

import functools
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DuplicateEntryError, VocabFormatError

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
SPECIALS = (PAD, UNK, CLS, SEP)
CONTINUATION = "##"
MAX_WORD_CHARS = 100


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    index: dict[str, int] = field(repr=False, compare=False)

    @classmethod
    def from_tokens(cls, tokens: Iterable[str]) -> "Vocabulary":
        tokens = tuple(tokens)
        index: dict[str, int] = {}
        for i, tok in enumerate(tokens):
            if not tok or any(ch.isspace() for ch in tok):
                raise VocabFormatError(f"entry {i} is empty or contains whitespace: {tok!r}")
            if tok in index:
                raise DuplicateEntryError(f"duplicate vocabulary entry {tok!r} at lines {index[tok]} and {i}")
            index[tok] = i
        missing = [s for s in SPECIALS if s not in index]
        if missing:
            raise VocabFormatError(f"vocabulary is missing special tokens {missing}")
        return cls(tokens, index)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def id(self, token: str) -> int:
        return self.index[token]

    @property
    def pad_id(self) -> int:
        return self.index[PAD]

    @property
    def unk_id(self) -> int:
        return self.index[UNK]

    @property
    def cls_id(self) -> int:
        return self.index[CLS]

    @property
    def sep_id(self) -> int:
        return self.index[SEP]

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]
    source_offsets: tuple[tuple[int, int], ...] | None = None

    def __len__(self) -> int:
        return len(self.ids)


def load_vocab(path: str | Path) -> Vocabulary:
    """One subword per line; the line number is the id."""
    text = Path(path).read_text(encoding="utf-8")
    return Vocabulary.from_tokens(text.splitlines())


def build_vocab(words: Sequence[str]) -> Vocabulary:
    """Specials first (ids 0-3), then ``words`` in the given order."""
    return Vocabulary.from_tokens(list(SPECIALS) + [w for w in words if w not in SPECIALS])


@functools.lru_cache(maxsize=4096)
def _is_punctuation(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def basic_tokenize(text: str) -> list[str]:
    words: list[str] = []
    current: list[str] = []
    for ch in text.lower():
        if ch.isspace() or _is_punctuation(ch):
            if current:
                words.append("".join(current))
                current = []
            if not ch.isspace():
                words.append(ch)
        else:
            current.append(ch)
    if current:
        words.append("".join(current))
    return words


def wordpiece(word: str, vocab: Vocabulary) -> list[str]:
    if len(word) > MAX_WORD_CHARS:
        return [UNK]
    pieces: list[str] = []
    start = 0
    while start < len(word):
        end = len(word)
        match = None
        while end > start:
            piece = word[start:end] if start == 0 else CONTINUATION + word[start:end]
            if piece in vocab.index:
                match = piece
                break
            end -= 1
        if match is None:
            return [UNK]
        pieces.append(match)
        start = end
    return pieces


def encode(text: str, vocab: Vocabulary) -> TokenSequence:
    ids = [vocab.index[p] for word in basic_tokenize(text) for p in wordpiece(word, vocab)]
    return TokenSequence(tuple(ids))
