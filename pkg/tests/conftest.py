import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from chunkpool.aggregation import AggregatorConfig
from chunkpool.chunker import ChunkingConfig
from chunkpool.classifier import ClassifierConfig, LabelSpace
from chunkpool.data import Document
from chunkpool.encoder import EncoderConfig
from chunkpool.model import DocumentClassifier, ModelConfig
from chunkpool.tokenizer import build_vocab

WORDS = ["alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta", "smokes", "never", "##s", "##ing"]

_criteria: list[tuple[str, bool, str]] = []


def record_criterion(name: str, passed: bool, detail: str = "") -> None:
    _criteria.append((name, bool(passed), detail))
    print(f"ACCEPTANCE {'PASS' if passed else 'FAIL'}: {name} {detail}".rstrip())


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _criteria:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}".rstrip())


@pytest.fixture
def vocab():
    return build_vocab(WORDS)


def small_config(vocab, kind="mean", *, content_len=6, hidden=16, n_layers=2, max_chunks=None,
                 dropout=0.0, labels=("a", "b"), task_type="multilabel"):
    if kind == "identity" and max_chunks is None:
        max_chunks = 3
    return ModelConfig(
        ChunkingConfig(content_len=content_len),
        EncoderConfig(len(vocab), hidden=hidden, n_layers=n_layers, n_heads=2,
                      max_positions=content_len + 2, dropout_p=dropout),
        AggregatorConfig(kind=kind, max_chunks=max_chunks, dropout_p=dropout),
        LabelSpace(tuple(labels), task_type),
        ClassifierConfig(dropout_p=dropout),
    )


@pytest.fixture
def small_model(vocab):
    return DocumentClassifier.build(small_config(vocab), vocab, seed=3)


def separable_corpus(n=24, seed=0):
    """'smokes' marks label a, 'never' marks label b; filler elsewhere."""
    rng = np.random.default_rng(seed)
    filler = ["alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta"]
    docs = []
    for i in range(n):
        words = list(rng.choice(filler, 10))
        labels = set()
        if i % 2 == 0:
            words[int(rng.integers(0, 10))] = "smokes"
            labels.add("a")
        if i % 3 == 0:
            words[int(rng.integers(0, 10))] = "never"
            labels.add("b")
        docs.append(Document(f"d{i}", " ".join(words), frozenset(labels)))
    return docs
