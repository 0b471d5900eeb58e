"""Linear + sigmoid head and the label decision rules."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError

TASK_TYPES = ("multilabel", "multiclass")


@dataclass(frozen=True)
class LabelSpace:
    names: tuple[str, ...]
    task_type: str = "multilabel"

    def __post_init__(self) -> None:
        object.__setattr__(self, "names", tuple(self.names))
        if not self.names:
            raise ConfigError("label space is empty")
        if len(set(self.names)) != len(self.names):
            raise ConfigError(f"duplicate label names in {self.names}")
        if any(not isinstance(n, str) or not n for n in self.names):
            raise ConfigError("label names must be non-empty strings")
        if self.task_type not in TASK_TYPES:
            raise ConfigError(f"task_type must be one of {TASK_TYPES}, got {self.task_type!r}")

    def __len__(self) -> int:
        return len(self.names)

    def __contains__(self, name: str) -> bool:
        return name in self.names

    def targets(self, labels) -> np.ndarray:
        """0/1 indicator vector in label order."""
        return np.array([1.0 if n in labels else 0.0 for n in self.names])


@dataclass(frozen=True)
class ClassifierConfig:
    threshold: float = 0.5
    dropout_p: float = 0.1

    def __post_init__(self) -> None:
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold {self.threshold} outside (0, 1)")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p {self.dropout_p} outside [0, 1)")


def init_head(in_width: int, n_labels: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    bound = 1.0 / math.sqrt(in_width)
    return {
        "head.w": rng.uniform(-bound, bound, (in_width, n_labels)),
        "head.b": np.zeros(n_labels),
    }


def project(doc_vec: Tensor, p: Mapping[str, Tensor], dropout_p: float = 0.0,
            mode: str = "eval", rng: np.random.Generator | None = None) -> Tensor:
    """sigmoid(dropout(doc_vec) · W + b) for a ``w`` vector or ``B×w`` batch."""
    w, b = p["head.w"], p["head.b"]
    if doc_vec.shape[-1] != w.shape[0]:
        raise DimensionError(f"head expects width {w.shape[0]}, got {doc_vec.shape[-1]}")
    single = doc_vec.ndim == 1
    x = ad.reshape(doc_vec, (1, doc_vec.shape[0])) if single else doc_vec
    x = ad.dropout(x, dropout_p, mode, rng)
    probs = ad.sigmoid(ad.add(ad.matmul(x, w), b))
    return ad.reshape(probs, (w.shape[1],)) if single else probs


def decide(probs: Sequence[float], space: LabelSpace, threshold: float = 0.5) -> tuple[str, ...]:
    """Multilabel: every label with p strictly above ``threshold``.
    Multiclass: the single argmax label (lowest index on ties); threshold unused."""
    probs = np.asarray(probs.data if isinstance(probs, Tensor) else probs, dtype=np.float64)
    if probs.shape != (len(space),):
        raise DimensionError(f"expected {len(space)} probabilities, got shape {probs.shape}")
    if space.task_type == "multiclass":
        return (space.names[int(np.argmax(probs))],)
    return tuple(n for n, p in zip(space.names, probs) if p > threshold)
