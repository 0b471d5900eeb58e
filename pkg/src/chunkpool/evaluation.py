"""Micro-averaged F1 over (document, label) pairs."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .classifier import LabelSpace, decide
from .data import Document
from .errors import AlignmentError


@dataclass
class EvalReport:
    micro_f1: float
    per_label: dict[str, tuple[int, int, int]]
    n_docs: int
    aggregator: str = ""
    config_digest: str = ""
    truncated_docs: int = 0

    def to_dict(self) -> dict:
        return {
            "micro_f1": self.micro_f1,
            "per_label": {k: {"tp": tp, "fp": fp, "fn": fn} for k, (tp, fp, fn) in self.per_label.items()},
            "n_docs": self.n_docs,
            "aggregator": self.aggregator,
            "config_digest": self.config_digest,
            "truncated_docs": self.truncated_docs,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def f1_from_counts(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def micro_f1(predictions: Mapping[str, Sequence[str]], golds: Mapping[str, Sequence[str]],
             space: LabelSpace) -> EvalReport:
    """Pool TP/FP/FN over every (document, label) pair; both maps are keyed by document id."""
    if set(predictions) != set(golds):
        missing = sorted(set(golds) ^ set(predictions))
        raise AlignmentError(f"prediction and gold document ids differ, e.g. {missing[:3]}")
    counts = {name: [0, 0, 0] for name in space.names}
    for doc_id, gold in golds.items():
        pred, gold = set(predictions[doc_id]), set(gold)
        for name in space.names:
            if name in pred and name in gold:
                counts[name][0] += 1
            elif name in pred:
                counts[name][1] += 1
            elif name in gold:
                counts[name][2] += 1
    tp, fp, fn = (sum(c[i] for c in counts.values()) for i in range(3))
    return EvalReport(f1_from_counts(tp, fp, fn), {k: tuple(v) for k, v in counts.items()}, len(golds))


def config_digest(config_dict: dict) -> str:
    blob = json.dumps(config_dict, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def evaluate(model, corpus: Sequence[Document], threshold: float | None = None) -> EvalReport:
    """Eval-mode predictions for ``corpus`` scored by micro-F1."""
    space = model.config.labels
    theta = model.config.classifier.threshold if threshold is None else threshold
    chunked = [model.prepare(doc.text) for doc in corpus]
    probs = model.predict_proba(chunked)
    preds = {doc.id: decide(p, space, theta) for doc, p in zip(corpus, probs)}
    golds = {doc.id: tuple(doc.gold_labels) for doc in corpus}
    report = micro_f1(preds, golds, space)
    report.aggregator = model.config.aggregator.kind
    report.config_digest = config_digest(model.config.to_dict())
    m = model.config.aggregator.max_chunks
    report.truncated_docs = sum(
        c.truncated or (model.config.aggregator.kind == "identity" and c.n_chunks > m) for c in chunked)
    return report
