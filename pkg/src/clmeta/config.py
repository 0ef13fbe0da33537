"""Run configuration: one JSON document covering corpus, model, training,
meta-learning, and splits. CLI flags override file values; the merged
result is what gets persisted next to every run."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .corpus import SplitSpec
from .encoder import EncoderConfig
from .errors import ValidationError
from .meta import MetaConfig
from .model import ModelConfig
from .trainer import TrainConfig


@dataclass(frozen=True)
class CorpusSpec:
    kind: str = "synthetic"  # or "csv", "jsonl"
    path: str | None = None
    num_classes: int = 24
    samples_per_class: int = 50
    min_count: int = 1

    def __post_init__(self):
        if self.kind not in ("synthetic", "csv", "jsonl"):
            raise ValidationError(f"corpus kind must be synthetic/csv/jsonl, got {self.kind!r}")
        if self.kind != "synthetic" and not self.path:
            raise ValidationError(f"corpus kind {self.kind!r} needs a path")


@dataclass(frozen=True)
class ModelSettings:
    """Model dimensions; vocab_size is resolved from the corpus at run time."""

    max_len: int = 32
    embed_dim: int = 64
    num_layers: int = 2
    num_heads: int = 4
    ff_dim: int = 128
    dropout: float = 0.1
    pool_hidden: int = 64
    proj_hidden: int = 64
    proj_dim: int = 32

    def to_model_config(self, vocab_size: int, num_classes: int) -> ModelConfig:
        return ModelConfig(
            encoder=EncoderConfig(
                vocab_size=vocab_size,
                max_len=self.max_len,
                embed_dim=self.embed_dim,
                num_layers=self.num_layers,
                num_heads=self.num_heads,
                ff_dim=self.ff_dim,
                dropout=self.dropout,
            ),
            num_classes=num_classes,
            pool_hidden=self.pool_hidden,
            proj_hidden=self.proj_hidden,
            proj_dim=self.proj_dim,
        )


@dataclass(frozen=True)
class RunConfig:
    seed: int = 7
    corpus: CorpusSpec = field(default_factory=CorpusSpec)
    model: ModelSettings = field(default_factory=ModelSettings)
    train: TrainConfig = field(default_factory=TrainConfig)
    meta: MetaConfig = field(default_factory=MetaConfig)
    split: SplitSpec = field(default_factory=SplitSpec)

    def resolved(self) -> "RunConfig":
        """Copy with the root seed fanned into train and split configs."""
        return replace(
            self,
            train=replace(self.train, seed=self.seed),
            split=replace(self.split, seed=self.seed),
        )

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "corpus": asdict(self.corpus),
            "model": asdict(self.model),
            "train": self.train.to_json(),
            "meta": self.meta.to_json(),
            "split": asdict(self.split),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RunConfig":
        return cls(
            seed=obj.get("seed", 7),
            corpus=CorpusSpec(**obj.get("corpus", {})),
            model=ModelSettings(**obj.get("model", {})),
            train=TrainConfig.from_json(obj.get("train", {})),
            meta=MetaConfig.from_json(obj.get("meta", {})),
            split=SplitSpec(**obj.get("split", {})),
        )

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        with Path(path).open(encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    def save(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def merge_overrides(config: RunConfig, overrides: dict) -> RunConfig:
    """Apply dotted-path overrides like {'train.variant': 'V2', 'seed': 9}."""
    obj = config.to_json()
    for key, value in overrides.items():
        if value is None:
            continue
        parts = key.split(".")
        cursor = obj
        for part in parts[:-1]:
            if part not in cursor:
                raise ValidationError(f"unknown config section {part!r} in {key!r}")
            cursor = cursor[part]
        if parts[-1] not in cursor:
            raise ValidationError(f"unknown config field {key!r}")
        cursor[parts[-1]] = value
    return RunConfig.from_json(obj)
