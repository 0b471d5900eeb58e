"""The full document classifier: tokenize, chunk, encode, pool, project."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .aggregation import AggregatorConfig, init_aggregator, pool
from .autodiff import Parameter, Tensor
from .chunker import ChunkedDocument, ChunkingConfig, chunk_document
from .classifier import ClassifierConfig, LabelSpace, decide, init_head, project
from .encoder import EncoderConfig, encode_chunks, init_encoder
from .errors import ConfigError
from .tokenizer import Vocabulary, encode

PREDICT_BATCH = 64


@dataclass(frozen=True)
class ModelConfig:
    chunking: ChunkingConfig
    encoder: EncoderConfig
    aggregator: AggregatorConfig
    labels: LabelSpace
    classifier: ClassifierConfig = ClassifierConfig()

    def __post_init__(self) -> None:
        if self.encoder.max_positions < self.chunking.total_len:
            raise ConfigError(
                f"encoder max_positions {self.encoder.max_positions} < chunk length {self.chunking.total_len}")
        if self.aggregator.kind == "transformer" and self.encoder.hidden % self.aggregator.n_heads:
            raise ConfigError("hidden size not divisible by the pooling layer's heads")

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["labels"]["names"] = list(self.labels.names)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        try:
            return cls(
                chunking=ChunkingConfig(**d["chunking"]),
                encoder=EncoderConfig(**d["encoder"]),
                aggregator=AggregatorConfig(**d["aggregator"]),
                labels=LabelSpace(tuple(d["labels"]["names"]), d["labels"].get("task_type", "multilabel")),
                classifier=ClassifierConfig(**d.get("classifier", {})),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed model config: {exc}") from exc


class DocumentClassifier:
    def __init__(self, config: ModelConfig, vocab: Vocabulary, params: dict[str, Parameter]):
        if config.encoder.vocab_size != len(vocab):
            raise ConfigError(f"encoder vocab_size {config.encoder.vocab_size} != vocabulary size {len(vocab)}")
        self.config = config
        self.vocab = vocab
        self.params = params

    @classmethod
    def build(cls, config: ModelConfig, vocab: Vocabulary, seed: int = 0) -> "DocumentClassifier":
        rng = np.random.default_rng(seed)
        d = config.encoder.hidden
        arrays = init_encoder(config.encoder, rng)
        arrays.update(init_aggregator(config.aggregator, d, rng))
        arrays.update(init_head(config.aggregator.out_width(d), len(config.labels), rng))
        params = {name: Parameter(name, Tensor(a)) for name, a in arrays.items()}
        return cls(config, vocab, params)

    @property
    def tensors(self) -> dict[str, Tensor]:
        return {name: p.tensor for name, p in self.params.items()}

    def trainable(self) -> list[Parameter]:
        return [p for p in self.params.values() if p.trainable]

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.tensor.grad = None

    def prepare(self, text: str) -> ChunkedDocument:
        return chunk_document(encode(text, self.vocab), self.config.chunking, self.vocab)

    def cls_stack(self, docs: Sequence[ChunkedDocument], mode: str = "eval",
                  rng: np.random.Generator | None = None) -> tuple[Tensor, np.ndarray]:
        """Encode every chunk of every document; returns ``B×P×d`` CLS rows
        (zero rows past each document's end) and the ``B×P`` chunk mask."""
        tensors = self.tensors
        ids = np.concatenate([doc.ids for doc in docs])
        mask = np.concatenate([doc.mask for doc in docs])
        reps = encode_chunks(ids, mask, tensors, self.config.encoder, mode, rng, cls_only=True)
        cls = ad.index(reps, (slice(None), 0))
        n, d = cls.shape
        longest = max(doc.n_chunks for doc in docs)
        gather = np.full((len(docs), longest), n, dtype=np.int64)
        chunk_mask = np.zeros((len(docs), longest), dtype=np.int8)
        start = 0
        for b, doc in enumerate(docs):
            gather[b, :doc.n_chunks] = np.arange(start, start + doc.n_chunks)
            chunk_mask[b, :doc.n_chunks] = 1
            start += doc.n_chunks
        table = ad.concat([cls, Tensor(np.zeros((1, d)))], axis=0)
        return ad.embedding_lookup(table, gather), chunk_mask

    def encode_document(self, doc: ChunkedDocument) -> Tensor:
        stack, _ = self.cls_stack([doc])
        return ad.index(stack, 0)

    def forward(self, docs: Sequence[ChunkedDocument], mode: str = "eval",
                rng: np.random.Generator | None = None) -> Tensor:
        """Label probabilities, ``B×n_labels``."""
        stack, chunk_mask = self.cls_stack(docs, mode, rng)
        doc_vecs, _ = pool(self.config.aggregator, stack, chunk_mask, self.tensors, mode, rng)
        return project(doc_vecs, self.tensors, self.config.classifier.dropout_p, mode, rng)

    def predict_proba(self, docs: Iterable[ChunkedDocument]) -> np.ndarray:
        docs = list(docs)
        out = np.zeros((len(docs), len(self.config.labels)))
        with ad.no_grad():
            for lo in range(0, len(docs), PREDICT_BATCH):
                out[lo:lo + PREDICT_BATCH] = self.forward(docs[lo:lo + PREDICT_BATCH], "eval").data
        return out

    def predict(self, docs: Iterable[ChunkedDocument]) -> list[tuple[str, ...]]:
        space, theta = self.config.labels, self.config.classifier.threshold
        return [decide(p, space, theta) for p in self.predict_proba(docs)]
