"""Configuration dataclasses and their INI file representation.

The file has four sections, ``[model]``, ``[train]``, ``[optim]`` and ``[l2]``,
one key per dataclass field. Unknown sections or keys are rejected so that a
typo never silently falls back to a default.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

OPTIMIZER_KINDS = ("sgd", "adadelta", "adam")


@dataclass(frozen=True)
class ModelConfig:
    word_vocab_size: int = 1000
    char_vocab_size: int = 64
    pos_vocab_size: int = 48
    word_dim: int = 300
    char_dim: int = 8
    char_filters: int = 100
    char_kernel: int = 5
    max_word_len: int = 16
    encoder_dim: int = 0  # 0 means "same as the feature width"
    highway_layers: int = 2
    first_scale_ratio: float = 0.3
    growth_rate: int = 20
    layers_per_block: int = 8
    num_blocks: int = 3
    transition_ratio: float = 0.5
    dropout: float = 0.2
    max_premise_len: int = 48
    max_hypothesis_len: int = 48
    num_classes: int = 3

    @property
    def feature_dim(self) -> int:
        return self.word_dim + self.char_filters + self.pos_vocab_size + 1

    @property
    def hidden_dim(self) -> int:
        return self.encoder_dim or self.feature_dim

    def validate(self) -> None:
        for name in ("word_vocab_size", "char_vocab_size", "pos_vocab_size"):
            if getattr(self, name) < 2:
                raise ConfigError(f"model.{name} must be >= 2 (padding and unknown ids are reserved)")
        positive = ("word_dim", "char_dim", "char_filters", "char_kernel", "max_word_len",
                    "growth_rate", "layers_per_block", "max_premise_len", "max_hypothesis_len")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"model.{name} must be positive")
        if self.char_kernel % 2 == 0:
            raise ConfigError("model.char_kernel must be odd (same padding)")
        if self.num_blocks != 3:
            raise ConfigError("model.num_blocks must be 3: three dense blocks, each followed by a transition")
        if self.highway_layers < 0 or self.encoder_dim < 0:
            raise ConfigError("model.highway_layers and model.encoder_dim must be >= 0")
        for name in ("first_scale_ratio", "transition_ratio"):
            r = getattr(self, name)
            if not 0.0 < r <= 1.0:
                raise ConfigError(f"model.{name} must be in (0, 1], got {r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"model.dropout must be in [0, 1), got {self.dropout}")
        if int(self.hidden_dim * self.first_scale_ratio) < 1:
            raise ConfigError("model.first_scale_ratio leaves zero channels after scale-down")

    @classmethod
    def toy(cls) -> "ModelConfig":
        """Small reference configuration used by tests and the quick-start."""
        return cls(word_vocab_size=1000, char_vocab_size=64, pos_vocab_size=48, word_dim=16,
                   growth_rate=8, layers_per_block=2, max_premise_len=32, max_hypothesis_len=32)


@dataclass(frozen=True)
class Stage:
    kind: str
    lr: float
    patience: int

    def __post_init__(self):
        if self.kind not in OPTIMIZER_KINDS:
            raise ConfigError(f"unknown optimizer kind {self.kind!r}; expected one of {OPTIMIZER_KINDS}")
        if self.lr <= 0 or self.patience < 1:
            raise ConfigError(f"stage {self.kind}: lr must be > 0 and patience >= 1")


DEFAULT_STAGES = (Stage("adam", 1e-3, 3), Stage("adadelta", 0.5, 4), Stage("sgd", 0.1, 5))


@dataclass(frozen=True)
class OptimPolicy:
    stages: tuple[Stage, ...] = DEFAULT_STAGES
    adadelta_rho: float = 0.95
    adadelta_eps: float = 1e-6
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def validate(self) -> None:
        if not self.stages:
            raise ConfigError("optim.stages must list at least one stage")


@dataclass(frozen=True)
class L2Schedule:
    lambda_full: float = 9e-5
    t_full: int = 100_000
    tau: float = 10_000.0

    def validate(self) -> None:
        if self.lambda_full < 0 or self.tau <= 0 or self.t_full < 0:
            raise ConfigError("l2: need lambda_full >= 0, tau > 0, t_full >= 0")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 70
    eval_batch_size: int = 128
    max_steps: int = 100_000
    seed: int = 0
    eval_mode: str = "adaptive"
    eval_interval: int = 500
    data_dir: str = ""
    embeddings: str = ""
    out_dir: str = "runs/default"
    max_train_examples: int = 0
    max_dev_examples: int = 0
    lowercase: bool = True
    model: ModelConfig = field(default_factory=ModelConfig)
    optim: OptimPolicy = field(default_factory=OptimPolicy)
    l2: L2Schedule = field(default_factory=L2Schedule)

    def validate(self) -> None:
        if self.batch_size < 1 or self.eval_batch_size < 1:
            raise ConfigError("train.batch_size and train.eval_batch_size must be >= 1")
        if self.max_steps < 0:
            raise ConfigError("train.max_steps must be >= 0")
        if self.eval_mode not in ("fixed", "adaptive"):
            raise ConfigError(f"train.eval_mode must be 'fixed' or 'adaptive', got {self.eval_mode!r}")
        if self.eval_interval < 1:
            raise ConfigError("train.eval_interval must be >= 1")
        self.model.validate()
        self.optim.validate()
        self.l2.validate()

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


# ---------------------------------------------------------------- file format

_SECTIONS = {"model": ModelConfig, "optim": OptimPolicy, "l2": L2Schedule}
_NESTED = {"model", "optim", "l2"}


def _render_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):  # stage list
        return ", ".join(f"{s.kind}:{s.lr!r}:{s.patience}" for s in value)
    return str(value)


def _parse_value(section: str, key: str, raw: str, kind):
    where = f"[{section}] {key}"
    raw = raw.strip()
    try:
        if kind is bool or kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind is int or kind == "int":
            return int(raw)
        if kind is float or kind == "float":
            return float(raw)
        if kind is str or kind == "str":
            return raw
        if "Stage" in str(kind):
            stages = []
            for item in raw.split(","):
                name, lr, patience = (part.strip() for part in item.split(":"))
                stages.append(Stage(name, float(lr), int(patience)))
            return tuple(stages)
    except ConfigError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {kind}") from None
    raise ConfigError(f"{where}: unsupported field type {kind}")


def _flat_fields(cls) -> dict:
    return {f.name: f.type for f in dataclasses.fields(cls) if f.name not in _NESTED}


def render_config(config: TrainConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser["train"] = {k: _render_value(getattr(config, k)) for k in _flat_fields(TrainConfig)}
    for section, cls in _SECTIONS.items():
        obj = getattr(config, section)
        parser[section] = {k: _render_value(getattr(obj, k)) for k in _flat_fields(cls)}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def parse_config(text: str, source: str = "<string>") -> TrainConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    known = {"train", *_SECTIONS}
    for section in parser.sections():
        if section not in known:
            raise ConfigError(f"{source}: unknown section [{section}]")

    def build(section, cls):
        if not parser.has_section(section):
            return cls()
        fields = _flat_fields(cls)
        values = {}
        for key, raw in parser.items(section):
            if key not in fields:
                raise ConfigError(f"{source}: unknown key [{section}] {key}")
            values[key] = _parse_value(section, key, raw, fields[key])
        try:
            return cls(**values)
        except ConfigError as exc:
            raise ConfigError(f"{source}: [{section}] {exc}") from None

    nested = {name: build(name, cls) for name, cls in _SECTIONS.items()}
    config = build("train", TrainConfig)
    config = dataclasses.replace(config, **nested)
    config.validate()
    return config


def load_config(path: str | Path) -> TrainConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror or exc}") from None
    return parse_config(text, source=str(path))


def toy_config(**train_overrides) -> TrainConfig:
    """Reference toy configuration (see ``configs/toy.ini``)."""
    base = TrainConfig(batch_size=16, eval_batch_size=64, max_steps=200, eval_mode="fixed",
                       eval_interval=5, out_dir="runs/toy", model=ModelConfig.toy())
    return dataclasses.replace(base, **train_overrides)
