"""Corpus I/O (JSONL) and the synthetic trigger-anywhere corpus generator."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .classifier import LabelSpace
from .errors import CorpusParseError, DuplicateIdError, LabelError, SyntheticSpecError
from .tokenizer import Vocabulary, build_vocab

TRIGGER_POSITIONS = ("uniform", "fixed", "beyond_first")


@dataclass(frozen=True)
class Document:
    id: str
    text: str
    gold_labels: frozenset[str] = field(default_factory=frozenset)

    def to_record(self, space: LabelSpace | None = None) -> dict:
        labels = sorted(self.gold_labels) if space is None else [n for n in space.names if n in self.gold_labels]
        return {"id": self.id, "text": self.text, "labels": labels}


def read_jsonl(path: str | Path, require_labels: bool = True) -> list[dict]:
    """Parse and type-check records; blank lines are skipped."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusParseError(line_no, f"invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise CorpusParseError(line_no, "record is not an object")
            if not isinstance(rec.get("id"), str) or not isinstance(rec.get("text"), str):
                raise CorpusParseError(line_no, 'needs string fields "id" and "text"')
            labels = rec.get("labels")
            if require_labels or labels is not None:
                if not isinstance(labels, list) or not all(isinstance(x, str) for x in labels):
                    raise CorpusParseError(line_no, '"labels" must be an array of strings')
            rec["_line"] = line_no
            records.append(rec)
    return records


def _check_unique(records: Iterable[dict]) -> None:
    seen: dict[str, int] = {}
    for rec in records:
        if rec["id"] in seen:
            raise DuplicateIdError(f"duplicate document id {rec['id']!r} on lines {seen[rec['id']]} and {rec['_line']}")
        seen[rec["id"]] = rec["_line"]


def load_jsonl_corpus(path: str | Path, space: LabelSpace) -> list[Document]:
    records = read_jsonl(path, require_labels=True)
    _check_unique(records)
    docs = []
    for rec in records:
        labels = frozenset(rec["labels"])
        unknown = sorted(labels - set(space.names))
        if unknown:
            raise LabelError(f"line {rec['_line']}: unknown labels {unknown}")
        if space.task_type == "multiclass" and len(labels) != 1:
            raise LabelError(f"line {rec['_line']}: multiclass document needs exactly one label")
        docs.append(Document(rec["id"], rec["text"], labels))
    return docs


def load_unlabeled(path: str | Path) -> list[Document]:
    records = read_jsonl(path, require_labels=False)
    _check_unique(records)
    return [Document(rec["id"], rec["text"]) for rec in records]


def write_jsonl_corpus(docs: Sequence[Document], path: str | Path, space: LabelSpace | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(doc.to_record(space), ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# synthetic corpora


@dataclass(frozen=True)
class SyntheticSpec:
    n_docs: int = 1000
    n_labels: int = 3
    chunks_per_doc: int = 4
    tokens_per_chunk: int = 32
    trigger_position: str = "uniform"
    fixed_chunk: int | None = None
    background_vocab_size: int = 200
    label_prevalence: float | tuple[float, ...] = 0.5
    seed: int = 0
    train_fraction: float = 0.8

    def __post_init__(self) -> None:
        if isinstance(self.label_prevalence, list):
            object.__setattr__(self, "label_prevalence", tuple(self.label_prevalence))
        for name in ("n_docs", "n_labels", "chunks_per_doc", "tokens_per_chunk", "background_vocab_size"):
            if getattr(self, name) < 1:
                raise SyntheticSpecError(f"{name} must be positive")
        if self.trigger_position not in TRIGGER_POSITIONS:
            raise SyntheticSpecError(f"trigger_position must be one of {TRIGGER_POSITIONS}")
        if self.trigger_position == "fixed" and not (
                self.fixed_chunk is not None and 1 <= self.fixed_chunk <= self.chunks_per_doc):
            raise SyntheticSpecError("fixed trigger_position needs 1 <= fixed_chunk <= chunks_per_doc")
        if any(not 0.0 < p < 1.0 for p in self.prevalences):
            raise SyntheticSpecError("label prevalence must lie in (0, 1)")
        if not 0.0 < self.train_fraction < 1.0:
            raise SyntheticSpecError("train_fraction must lie in (0, 1)")

    @property
    def prevalences(self) -> tuple[float, ...]:
        p = self.label_prevalence
        if isinstance(p, tuple):
            if len(p) != self.n_labels:
                raise SyntheticSpecError(f"{len(p)} prevalences for {self.n_labels} labels")
            return p
        return (float(p),) * self.n_labels

    @property
    def label_names(self) -> tuple[str, ...]:
        return tuple(f"label{j}" for j in range(self.n_labels))

    @property
    def trigger_words(self) -> tuple[str, ...]:
        return tuple(f"trigger{j}" for j in range(self.n_labels))

    @property
    def background_words(self) -> tuple[str, ...]:
        return tuple(f"w{i:05d}" for i in range(self.background_vocab_size))

    def label_space(self) -> LabelSpace:
        return LabelSpace(self.label_names, "multilabel")


def synthetic_vocab(spec: SyntheticSpec) -> Vocabulary:
    return build_vocab(list(spec.background_words) + list(spec.trigger_words))


def _trigger_slots(spec: SyntheticSpec, content_len: int) -> np.ndarray:
    tpc, n = spec.tokens_per_chunk, spec.chunks_per_doc * spec.tokens_per_chunk
    if spec.trigger_position == "uniform":
        lo, hi = 0, n
    elif spec.trigger_position == "fixed":
        lo, hi = (spec.fixed_chunk - 1) * tpc, spec.fixed_chunk * tpc
    else:
        # past both the generator's first chunk and the chunker's first window
        lo, hi = max(tpc, content_len), n
    if hi - lo < spec.n_labels:
        raise SyntheticSpecError(f"only {max(hi - lo, 0)} trigger slots for {spec.n_labels} labels")
    return np.arange(lo, hi)


def generate_synthetic_corpus(spec: SyntheticSpec, vocab: Vocabulary,
                              content_len: int = 510) -> tuple[list[Document], list[Document]]:
    """Background words with label-specific trigger words placed per
    ``trigger_position``; each trigger overwrites one background word. Gold
    labels are exactly the triggers present. Returns a seeded (train, test) split."""
    if spec.tokens_per_chunk > content_len:
        raise SyntheticSpecError(f"tokens_per_chunk {spec.tokens_per_chunk} exceeds chunk content length {content_len}")
    needed = [w for w in spec.background_words + spec.trigger_words if w not in vocab]
    if needed:
        raise SyntheticSpecError(f"vocabulary lacks synthetic words, e.g. {needed[:3]}")
    slots = _trigger_slots(spec, content_len)
    rng = np.random.default_rng(spec.seed)
    background = np.array(spec.background_words)
    prevalence = np.array(spec.prevalences)
    n_tokens = spec.chunks_per_doc * spec.tokens_per_chunk
    docs = []
    for i in range(spec.n_docs):
        words = list(background[rng.integers(0, len(background), n_tokens)])
        present = np.flatnonzero(rng.random(spec.n_labels) < prevalence)
        positions = rng.choice(slots, size=len(present), replace=False)
        for j, pos in zip(present, positions):
            words[int(pos)] = spec.trigger_words[j]
        labels = frozenset(spec.label_names[j] for j in present)
        docs.append(Document(f"doc{i:05d}", " ".join(words), labels))
    order = rng.permutation(spec.n_docs)
    n_train = int(round(spec.train_fraction * spec.n_docs))
    train = [docs[k] for k in sorted(order[:n_train])]
    test = [docs[k] for k in sorted(order[n_train:])]
    return train, test
