"""The run configuration document.

One UTF-8 JSON file with ``dataset``, ``model``, ``loss``, ``train`` and
``eval`` blocks. Unknown keys are rejected with the offending field named;
all cross-module invariants are checked before any work starts. CLI flags
override config fields, which override defaults.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .data import FORMATS
from .errors import ConfigError
from .losses import LossConfig
from .model import ModelConfig
from .training import TrainConfig


@dataclass
class DatasetConfig:
    """Where the data comes from: a raw file (loaded, filtered, split on the
    fly) or a prepared split file."""

    path: str | None = None
    format: str = "ml100k"
    min_user: int = 0
    min_item: int = 0
    split: str | None = None

    def validate(self):
        if self.format not in FORMATS:
            raise ConfigError(f"dataset.format must be one of {FORMATS}, got {self.format!r}")
        if self.min_user < 0 or self.min_item < 0:
            raise ConfigError("dataset.min_user and dataset.min_item must be >= 0")
        return self


@dataclass
class EvalConfig:
    negatives: int = 100
    cutoffs: list[int] = field(default_factory=lambda: list(range(1, 11)))
    seed: int = 0
    cohorts: list[float] = field(default_factory=list)
    workers: int = 1

    def validate(self):
        if self.negatives < 1:
            raise ConfigError(f"eval.negatives must be >= 1, got {self.negatives}")
        if not self.cutoffs or any(n < 1 for n in self.cutoffs):
            raise ConfigError(f"eval.cutoffs must be positive integers, got {self.cutoffs}")
        for p in self.cohorts:
            if not 0.0 < p <= 1.0:
                raise ConfigError(f"eval.cohorts entries must lie in (0, 1], got {p}")
        if self.workers < 1:
            raise ConfigError(f"eval.workers must be >= 1, got {self.workers}")
        return self


@dataclass
class BaselineConfig:
    factors: int = 64
    epochs: int = 50
    learning_rate: float = 0.01
    reg: float = 0.01

    def validate(self):
        if self.factors < 1:
            raise ConfigError(f"baseline.factors must be >= 1, got {self.factors}")
        if self.epochs < 0:
            raise ConfigError(f"baseline.epochs must be >= 0, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ConfigError(f"baseline.learning_rate must be > 0, got {self.learning_rate}")
        if self.reg < 0:
            raise ConfigError(f"baseline.reg must be >= 0, got {self.reg}")
        return self


@dataclass
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)

    def validate(self):
        self.dataset.validate()
        self.model.validate()
        self.loss.validate()
        self.train.loss = self.loss
        self.train.validate()
        self.eval.validate()
        self.baseline.validate()
        return self

    def to_json_dict(self) -> dict:
        doc = {}
        for block_name in ("dataset", "model", "loss", "train", "eval", "baseline"):
            block = getattr(self, block_name)
            doc[block_name] = dataclasses.asdict(block)
        del doc["train"]["loss"]  # echoed once, in the loss block
        return doc


_BLOCKS = {
    "dataset": DatasetConfig,
    "model": ModelConfig,
    "loss": LossConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
    "baseline": BaselineConfig,
}


def _build_block(cls, block_name: str, doc: dict):
    known = {f.name for f in dataclasses.fields(cls)} - {"loss"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown key {block_name}.{sorted(unknown)[0]}")
    try:
        return cls(**{k: v for k, v in doc.items() if k != "loss"})
    except TypeError as exc:
        raise ConfigError(f"bad {block_name} block: {exc}") from exc


def config_from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    unknown = set(doc) - set(_BLOCKS)
    if unknown:
        raise ConfigError(f"unknown config block {sorted(unknown)[0]!r}")
    config = RunConfig()
    for name, cls in _BLOCKS.items():
        if name in doc:
            if not isinstance(doc[name], dict):
                raise ConfigError(f"config block {name!r} must be a JSON object")
            setattr(config, name, _build_block(cls, name, doc[name]))
    return config.validate()


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            doc = json.load(handle)
    except OSError as exc:
        raise ConfigError(f"cannot open config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return config_from_dict(doc)


def apply_overrides(config: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply ``block.key=value`` overrides (values parsed as JSON, falling
    back to strings); flags beat the config file."""
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} must look like block.key=value")
        dotted, raw = item.split("=", 1)
        block_name, key = dotted.split(".", 1)
        if block_name not in _BLOCKS:
            raise ConfigError(f"unknown config block {block_name!r} in override {item!r}")
        block = getattr(config, block_name)
        if key not in {f.name for f in dataclasses.fields(block)}:
            raise ConfigError(f"unknown key {block_name}.{key}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        setattr(block, key, value)
    return config.validate()
