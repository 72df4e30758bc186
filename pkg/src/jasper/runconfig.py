"""INI run configuration with strict validation.

Sections: ``[model]``, ``[data]``, ``[optim]``, ``[train]``, ``[decode]``.
Unknown sections and keys are rejected with a close-match suggestion.
Relative paths are resolved against the config file's directory.
"""

from __future__ import annotations

import configparser
import difflib
import typing
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .config import PRESETS, ModelConfig, preset
from .ctc import DEFAULT_GRAPHEMES, Alphabet
from .features import FeatureConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSection:
    preset: str = "mini2x2"
    topology: str = ""
    norm: str = ""
    activation: str = ""
    masking: str = ""
    dtype: str = "float64"
    seed: int = 0


@dataclass(frozen=True)
class DataSection:
    train_manifest: str = ""
    dev_manifest: str = ""
    n_mels: int = 40
    speed_perturb: str = "none"
    graphemes: str = ""  # empty: a-z, space, apostrophe


@dataclass(frozen=True)
class OptimSection:
    kind: str = "novograd"
    lr: float = 0.01
    schedule: str = "poly"
    warmup: int = 0
    beta1: float = 0.95
    beta2: float = 0.5
    eps: float = 1e-8
    weight_decay: float = 1e-3
    momentum: float = 0.9


@dataclass(frozen=True)
class TrainSection:
    epochs: int = 10
    batch_size: int = 4
    seed: int = 0
    checkpoint_dir: str = "checkpoints"
    early_stop_wer: float = -1.0  # stop once dev WER <= this; negative disables
    keep_checkpoints: int = 3  # most recent epoch checkpoints kept; 0 keeps all


@dataclass(frozen=True)
class DecodeSection:
    mode: str = "greedy"
    beam_width: int = 2048
    alpha: float = 0.0
    beta: float = 0.0
    lm_path: str = ""
    nbest: int = 10
    w_am: float = 1.0
    w_lm: float = 0.0
    w_wc: float = 0.0


SECTIONS = {
    "model": ModelSection,
    "data": DataSection,
    "optim": OptimSection,
    "train": TrainSection,
    "decode": DecodeSection,
}
PATH_KEYS = {("data", "train_manifest"), ("data", "dev_manifest"), ("train", "checkpoint_dir"), ("decode", "lm_path")}
CHOICES = {
    ("optim", "kind"): ("novograd", "sgd"),
    ("optim", "schedule"): ("poly", "const"),
    ("data", "speed_perturb"): ("none", "fixed", "random"),
    ("decode", "mode"): ("greedy", "beam", "beam+rescore"),
}


@dataclass(frozen=True)
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    data: DataSection = field(default_factory=DataSection)
    optim: OptimSection = field(default_factory=OptimSection)
    train: TrainSection = field(default_factory=TrainSection)
    decode: DecodeSection = field(default_factory=DecodeSection)

    def alphabet(self) -> Alphabet:
        return Alphabet(tuple(self.data.graphemes) if self.data.graphemes else DEFAULT_GRAPHEMES)

    def feature_config(self) -> FeatureConfig:
        return FeatureConfig(n_mels=self.data.n_mels)

    def model_config(self) -> ModelConfig:
        m = self.model
        overrides = {k: getattr(m, k) for k in ("topology", "norm", "activation", "masking") if getattr(m, k)}
        try:
            return preset(
                m.preset, n_features=self.data.n_mels, vocab=self.alphabet().graphemes, dtype=m.dtype, **overrides
            )
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"[model] {exc}") from None

    def optimizer_hyper(self) -> dict:
        o = self.optim
        if o.kind == "novograd":
            return {"beta1": o.beta1, "beta2": o.beta2, "eps": o.eps, "weight_decay": o.weight_decay}
        return {"momentum": o.momentum, "weight_decay": o.weight_decay}


def _suggest(word: str, options) -> str:
    close = difflib.get_close_matches(word, list(options), n=1)
    return f"; did you mean {close[0]!r}?" if close else ""


def _convert(section: str, key: str, raw: str, typ):
    try:
        if typ is bool:
            return configparser.ConfigParser.BOOLEAN_STATES[raw.lower()]
        return typ(raw)
    except (ValueError, KeyError):
        raise ConfigError(f"[{section}] {key} = {raw!r} is not a valid {typ.__name__}") from None


def parse_run_config(text: str, base_dir=".") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep key case so misspellings are reported verbatim
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    base = Path(base_dir)
    sections = {}
    for name in parser.sections():
        if name not in SECTIONS:
            raise ConfigError(f"unknown section [{name}]{_suggest(name, SECTIONS)}")
        cls = SECTIONS[name]
        hints = typing.get_type_hints(cls)
        known = {f.name for f in fields(cls)}
        values = {}
        for key, raw in parser.items(name):
            if key not in known:
                raise ConfigError(f"[{name}] unknown key {key!r}{_suggest(key, known)}")
            value = _convert(name, key, raw.strip(), hints[key])
            if (name, key) in CHOICES and value not in CHOICES[(name, key)]:
                raise ConfigError(f"[{name}] {key} must be one of {CHOICES[(name, key)]}, got {value!r}")
            if (name, key) in PATH_KEYS and value and not Path(value).is_absolute():
                value = str(base / value)
            values[key] = value
        sections[name] = cls(**values)
    cfg = RunConfig(**sections)
    validate(cfg)
    return cfg


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parse_run_config(text, path.parent)


def validate(cfg: RunConfig) -> None:
    if cfg.model.preset not in PRESETS:
        raise ConfigError(f"[model] unknown preset {cfg.model.preset!r}{_suggest(cfg.model.preset, PRESETS)}")
    if cfg.train.epochs < 0:
        raise ConfigError("[train] epochs must be >= 0")
    if cfg.train.batch_size < 1:
        raise ConfigError("[train] batch_size must be >= 1")
    if cfg.train.keep_checkpoints < 0:
        raise ConfigError("[train] keep_checkpoints must be >= 0")
    if cfg.optim.lr <= 0:
        raise ConfigError("[optim] lr must be > 0")
    if cfg.decode.beam_width < 1 or cfg.decode.nbest < 1:
        raise ConfigError("[decode] beam_width and nbest must be >= 1")
    try:
        cfg.alphabet()
    except ValueError as exc:
        raise ConfigError(f"[data] graphemes: {exc}") from None
    cfg.model_config()


def with_overrides(cfg: RunConfig, **sections) -> RunConfig:
    """Return a copy with per-section field overrides, e.g. ``train={"epochs": 0}``."""
    out = cfg
    for name, values in sections.items():
        out = replace(out, **{name: replace(getattr(out, name), **values)})
    validate(out)
    return out
