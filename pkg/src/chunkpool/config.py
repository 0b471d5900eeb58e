"""The run configuration file (JSON) consumed by the command-line tool.

Relative paths are resolved against the directory holding the config file.
``encoder.vocab_size`` may be omitted; it is filled in from the vocabulary.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

from .aggregation import AggregatorConfig
from .chunker import ChunkingConfig
from .classifier import ClassifierConfig, LabelSpace
from .data import SyntheticSpec
from .encoder import EncoderConfig
from .errors import ConfigError
from .model import ModelConfig
from .training import TrainConfig

_SECTIONS = {"vocab_path", "chunking", "encoder", "aggregator", "labels", "classifier",
             "train", "data", "synthetic", "output_dir"}


@dataclass(frozen=True)
class RunConfig:
    chunking: ChunkingConfig
    encoder: dict[str, Any]
    aggregator: AggregatorConfig
    labels: LabelSpace
    classifier: ClassifierConfig
    train: TrainConfig
    synthetic: SyntheticSpec | None
    output_dir: Path
    vocab_path: Path
    train_path: Path
    test_path: Path
    raw: dict

    def model_config(self, vocab_size: int) -> ModelConfig:
        enc = dict(self.encoder)
        declared = enc.pop("vocab_size", None)
        if declared is not None and declared != vocab_size:
            raise ConfigError(f"config vocab_size {declared} but vocabulary has {vocab_size} entries")
        return ModelConfig(self.chunking, EncoderConfig(vocab_size=vocab_size, **enc),
                           self.aggregator, self.labels, self.classifier)

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, train=replace(self.train, seed=seed))


def _section(raw: dict, key: str) -> dict:
    value = raw.get(key, {})
    if not isinstance(value, dict):
        raise ConfigError(f"config section {key!r} must be an object")
    return value


def parse_config(raw: dict, base_dir: str | Path = ".") -> RunConfig:
    """Validate every section before any work starts."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    unknown = set(raw) - _SECTIONS
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    base = Path(base_dir)
    try:
        chunking = ChunkingConfig(**_section(raw, "chunking"))
        aggregator = AggregatorConfig(**_section(raw, "aggregator"))
        classifier = ClassifierConfig(**_section(raw, "classifier"))
        train = TrainConfig(**_section(raw, "train"))
        synthetic = SyntheticSpec(**raw["synthetic"]) if "synthetic" in raw else None
        encoder = dict(_section(raw, "encoder"))
        # probe the encoder section with a placeholder vocabulary size
        EncoderConfig(**{"vocab_size": 1, **encoder})
    except TypeError as exc:
        raise ConfigError(f"bad config field: {exc}") from None

    labels_raw = raw.get("labels")
    if labels_raw is not None:
        labels = LabelSpace(tuple(labels_raw.get("names", ())), labels_raw.get("task_type", "multilabel"))
    elif synthetic is not None:
        labels = synthetic.label_space()
    else:
        raise ConfigError("config needs a labels section (or a synthetic section)")
    if synthetic is not None:
        if labels.names != synthetic.label_names or labels.task_type != "multilabel":
            raise ConfigError(f"synthetic corpora use multilabel labels {list(synthetic.label_names)}")
        if synthetic.tokens_per_chunk > chunking.content_len:
            raise ConfigError(f"synthetic tokens_per_chunk {synthetic.tokens_per_chunk} exceeds "
                              f"chunking content_len {chunking.content_len}")

    ModelConfig(chunking, EncoderConfig(**{"vocab_size": 1, **encoder}), aggregator, labels, classifier)

    output_dir = base / raw.get("output_dir", "run")
    data = _section(raw, "data")
    return RunConfig(
        chunking=chunking,
        encoder=encoder,
        aggregator=aggregator,
        labels=labels,
        classifier=classifier,
        train=train,
        synthetic=synthetic,
        output_dir=output_dir,
        vocab_path=base / raw["vocab_path"] if "vocab_path" in raw else output_dir / "vocab.txt",
        train_path=base / data["train_path"] if "train_path" in data else output_dir / "train.jsonl",
        test_path=base / data["test_path"] if "test_path" in data else output_dir / "test.jsonl",
        raw=raw,
    )


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    return parse_config(raw, path.parent)
