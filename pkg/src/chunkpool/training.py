"""Adam optimisation with top-layer-only fine-tuning."""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter
from .chunker import ChunkedDocument
from .data import Document
from .errors import ConfigError, CorpusError, LabelError, NumericError
from .model import DocumentClassifier

log = logging.getLogger(__name__)

_LAYER = re.compile(r"^encoder\.layer(\d+)\.")
DROPOUT_STREAM = 1


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    epochs: int = 30
    batch_size: int = 16
    seed: int = 0
    freeze_below_last: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "betas", tuple(self.betas))
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if len(self.betas) != 2 or not all(0.0 <= b < 1.0 for b in self.betas):
            raise ConfigError(f"betas must be two values in [0, 1), got {self.betas}")


def set_trainability(model: DocumentClassifier, freeze_below_last: bool) -> None:
    """Freeze embeddings and every encoder layer except the top one, or unfreeze all."""
    top = model.config.encoder.n_layers
    for name, p in model.params.items():
        if not freeze_below_last:
            p.set_trainable(True)
            continue
        m = _LAYER.match(name)
        frozen = name.startswith("embeddings.") or (m is not None and int(m.group(1)) < top)
        p.set_trainable(not frozen)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: dict[str, int] = field(default_factory=dict)


def adam_step(params: Sequence[Parameter], state: AdamState, cfg: TrainConfig) -> None:
    """One bias-corrected Adam update on trainable parameters, then clear gradients.

    A missing gradient counts as zero.
    """
    b1, b2 = cfg.betas
    for p in params:
        if not p.trainable:
            continue
        t = p.tensor
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        m = state.m.get(p.name, np.zeros_like(t.data))
        v = state.v.get(p.name, np.zeros_like(t.data))
        step = state.t.get(p.name, 0) + 1
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** step)
        v_hat = v / (1.0 - b2 ** step)
        t.data = t.data - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
        state.m[p.name], state.v[p.name], state.t[p.name] = m, v, step
        t.grad = None


@dataclass
class TrainingLog:
    epoch_losses: list[float] = field(default_factory=list)
    steps: int = 0

    def to_csv(self) -> str:
        rows = ["epoch,mean_loss"] + [f"{i},{loss!r}" for i, loss in enumerate(self.epoch_losses, start=1)]
        return "\n".join(rows) + "\n"


def _check_labels(model: DocumentClassifier, corpus: Sequence[Document]) -> None:
    space = model.config.labels
    for doc in corpus:
        unknown = sorted(set(doc.gold_labels) - set(space.names))
        if unknown:
            raise LabelError(f"document {doc.id!r} has labels outside the label space: {unknown}")
        if space.task_type == "multiclass" and len(doc.gold_labels) != 1:
            raise LabelError(f"multiclass document {doc.id!r} needs exactly one label")


def fit(model: DocumentClassifier, corpus: Sequence[Document], cfg: TrainConfig,
        on_epoch: Callable[[int, float], None] | None = None) -> TrainingLog:
    """Minibatch training on mean BCE; fully determined by ``cfg.seed``."""
    if not corpus:
        raise CorpusError("cannot train on an empty corpus")
    _check_labels(model, corpus)
    set_trainability(model, cfg.freeze_below_last)
    chunked: list[ChunkedDocument] = [model.prepare(doc.text) for doc in corpus]
    targets = np.stack([model.config.labels.targets(doc.gold_labels) for doc in corpus])
    state = AdamState()
    history = TrainingLog()
    trainable = model.trainable()
    for epoch in range(1, cfg.epochs + 1):
        stream = cfg.seed ^ epoch
        order = np.random.default_rng(stream).permutation(len(corpus))
        drop_rng = np.random.default_rng([stream, DROPOUT_STREAM])
        total = 0.0
        for lo in range(0, len(order), cfg.batch_size):
            batch = order[lo:lo + cfg.batch_size]
            probs = model.forward([chunked[i] for i in batch], "train", drop_rng)
            loss = ad.bce_loss(probs, targets[batch])
            ad.backward(loss)
            adam_step(trainable, state, cfg)
            total += float(loss.data) * len(batch)
            history.steps += 1
        mean_loss = total / len(corpus)
        if not np.isfinite(mean_loss) or not all(np.all(np.isfinite(p.tensor.data)) for p in trainable):
            raise NumericError(epoch)
        history.epoch_losses.append(mean_loss)
        log.info("epoch %d mean loss %.6f", epoch, mean_loss)
        if on_epoch is not None:
            on_epoch(epoch, mean_loss)
    return history
