"""Declarative Jasper BxR network descriptions and named presets."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

from .core.ops import ACTIVATIONS
from .ctc import DEFAULT_GRAPHEMES

TOPOLOGIES = ("residual", "dense_residual", "densenet", "densernet", "none")
NORMS = ("batch", "layer_masked", "weight")
MASKING = ("none", "bn", "conv", "conv+bn")


@dataclass(frozen=True)
class BlockSpec:
    kernel: int
    channels: int
    dropout: float = 0.0
    sub_blocks: int = 1
    stride: int = 1
    dilation: int = 1

    def __post_init__(self):
        if self.kernel % 2 == 0 or self.kernel < 1:
            raise ValueError(f"kernel must be odd, got {self.kernel}")
        if self.channels <= 0:
            raise ValueError("channels must be > 0")
        if not 0 <= self.dropout < 1:
            raise ValueError(f"dropout rate must be in [0, 1), got {self.dropout}")
        if self.sub_blocks < 1:
            raise ValueError("sub_blocks must be >= 1")
        if self.stride > 1 and self.dilation > 1:
            raise ValueError("stride and dilation cannot both exceed 1")


@dataclass(frozen=True)
class ModelConfig:
    """A Jasper network: Conv1, ``blocks``, then Conv2..Conv4.

    ``post`` holds Conv2, Conv3 and Conv4; Conv4's channel count must be
    ``len(vocab) + 1`` (the extra output is the CTC blank).

    Dropout values are stored as given and capped at ``max_dropout`` when
    the network is built (Conv1's 0.8 would otherwise drop most inputs).
    """

    pre: BlockSpec
    blocks: tuple[BlockSpec, ...]
    post: tuple[BlockSpec, BlockSpec, BlockSpec]
    n_features: int = 64
    topology: str = "residual"
    norm: str = "batch"
    activation: str = "relu"
    masking: str = "conv"
    vocab: tuple[str, ...] = DEFAULT_GRAPHEMES
    max_dropout: float = 0.5
    dtype: str = "float64"

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        object.__setattr__(self, "post", tuple(self.post))
        object.__setattr__(self, "vocab", tuple(self.vocab))
        if self.topology not in TOPOLOGIES:
            raise ValueError(f"unknown topology {self.topology!r}; choose from {TOPOLOGIES}")
        if self.norm not in NORMS:
            raise ValueError(f"unknown norm {self.norm!r}; choose from {NORMS}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; choose from {ACTIVATIONS}")
        if self.masking not in MASKING:
            raise ValueError(f"unknown masking {self.masking!r}; choose from {MASKING}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")
        if not self.vocab:
            raise ValueError("vocab is empty")
        if len(self.post) != 3:
            raise ValueError("exactly three post-blocks (Conv2..Conv4) required")
        if not self.blocks:
            raise ValueError("at least one block required")
        if self.post[2].channels != len(self.vocab) + 1:
            raise ValueError(f"Conv4 channels must be |vocab|+1 = {len(self.vocab) + 1}, got {self.post[2].channels}")
        if self.n_features <= 0:
            raise ValueError("n_features must be > 0")

    @property
    def num_blocks(self) -> int:
        return len(self.blocks)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["pre"] = BlockSpec(**d["pre"])
        d["blocks"] = tuple(BlockSpec(**b) for b in d["blocks"])
        d["post"] = tuple(BlockSpec(**b) for b in d["post"])
        d["vocab"] = tuple(d["vocab"])
        return cls(**d)

    def to_text(self) -> str:
        """Canonical text form (sorted-key JSON) used inside checkpoints."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        return cls.from_dict(json.loads(text))

    def with_vocab(self, vocab) -> "ModelConfig":
        vocab = tuple(vocab)
        conv4 = replace(self.post[2], channels=len(vocab) + 1)
        return replace(self, vocab=vocab, post=(self.post[0], self.post[1], conv4))


# Block groups B1..B5: (kernel, channels, dropout)
JASPER_BLOCKS = ((11, 256, 0.2), (13, 384, 0.2), (17, 512, 0.2), (21, 640, 0.3), (25, 768, 0.3))


def jasper_config(
    num_blocks: int,
    sub_blocks: int,
    topology: str = "dense_residual",
    n_features: int = 64,
    vocab=DEFAULT_GRAPHEMES,
    width: float = 1.0,
    **overrides,
) -> ModelConfig:
    """Jasper BxR: each of the block groups B1..B5 repeated ``num_blocks / 5`` times.

    ``width`` scales block channel counts (rounded to a multiple of 8); it is
    how concatenative topologies are brought to parameter parity.
    """
    if num_blocks % 5:
        raise ValueError("Jasper layouts need a multiple of 5 blocks")
    repeat = num_blocks // 5

    def ch(c):
        return max(8, int(round(c * width / 8)) * 8)

    blocks = tuple(
        BlockSpec(k, ch(c), d, sub_blocks) for k, c, d in JASPER_BLOCKS for _ in range(repeat)
    )
    return ModelConfig(
        pre=BlockSpec(11, 256, 0.8, 1, stride=2),
        blocks=blocks,
        post=(BlockSpec(29, 896, 0.4, 1, dilation=2), BlockSpec(1, 1024, 0.4), BlockSpec(1, len(vocab) + 1, 0.3)),
        n_features=n_features,
        topology=topology,
        vocab=tuple(vocab),
        **overrides,
    )


def mini_config(name: str, n_features: int = 40, vocab=DEFAULT_GRAPHEMES, **overrides) -> ModelConfig:
    """Desk-scale presets for tests and the synthetic overfit experiment."""
    out = BlockSpec(1, len(vocab) + 1)
    if name == "mini1x1":
        return ModelConfig(
            pre=BlockSpec(3, 8, stride=2),
            blocks=(BlockSpec(3, 8, 0.0, 1),),
            post=(BlockSpec(3, 8, dilation=2), BlockSpec(1, 8), out),
            n_features=n_features,
            vocab=tuple(vocab),
            **overrides,
        )
    layouts = {
        "mini2x2": ((11, 64), (13, 96)),
        "mini3x2": ((11, 64), (13, 96), (17, 128)),
    }
    if name not in layouts:
        raise ValueError(f"unknown mini preset {name!r}")
    return ModelConfig(
        pre=BlockSpec(11, 64, 0.0, stride=2),
        blocks=tuple(BlockSpec(k, c, 0.0, 2) for k, c in layouts[name]),
        post=(BlockSpec(29, 128, 0.0, dilation=2), BlockSpec(1, 128, 0.0), out),
        n_features=n_features,
        vocab=tuple(vocab),
        **overrides,
    )


# Concatenative variants are narrowed so the four topologies carry
# roughly the same parameter count at 10x3 (see test_model parity check).
PARITY_WIDTH = {"residual": 1.0, "dense_residual": 1.0, "densenet": 0.985, "densernet": 0.95}

PRESETS = {
    "jasper10x5dr": lambda **kw: jasper_config(10, 5, "dense_residual", **kw),
    "jasper10x5": lambda **kw: jasper_config(10, 5, "residual", **kw),
    "jasper10x3": lambda **kw: jasper_config(10, 3, "residual", **kw),
    "jasper10x3dr": lambda **kw: jasper_config(10, 3, "dense_residual", **kw),
    "jasper10x3densenet": lambda **kw: jasper_config(10, 3, "densenet", width=PARITY_WIDTH["densenet"], **kw),
    "jasper10x3densernet": lambda **kw: jasper_config(10, 3, "densernet", width=PARITY_WIDTH["densernet"], **kw),
    "jasper10x4dr": lambda **kw: jasper_config(10, 4, "dense_residual", **kw),
    "jasper5x3": lambda **kw: jasper_config(5, 3, "residual", **kw),
    "mini1x1": lambda **kw: mini_config("mini1x1", **kw),
    "mini2x2": lambda **kw: mini_config("mini2x2", **kw),
    "mini3x2": lambda **kw: mini_config("mini3x2", **kw),
}


def preset(name: str, **overrides) -> ModelConfig:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; available: {sorted(PRESETS)}") from None
    return factory(**overrides)
