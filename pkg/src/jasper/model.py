"""Jasper network construction, forward pass, and structural introspection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import ModelConfig
from .core import (
    GATED,
    NonFiniteError,
    NormParams,
    PaddedBatch,
    Tensor,
    activation,
    add_n,
    apply_mask,
    batch_norm,
    concat,
    conv1d,
    conv_out_length,
    dropout,
    fold_batchnorm,
    layer_norm_masked,
    log_softmax,
    make_rng,
    sequence_mask,
    weight_norm,
    weight_norm_reparam,
)


@dataclass(frozen=True)
class ConvUnit:
    """One convolution followed by the configured normalization (if any)."""

    name: str
    cin: int
    cout: int
    kernel: int
    stride: int = 1
    dilation: int = 1
    norm: str | None = "batch"  # batch | layer_masked | None
    weight_norm: bool = False
    main: bool = True  # counts toward the BxR+4 conv-layer law

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        if self.weight_norm:
            shapes[f"{self.name}.conv.g"] = (self.cout,)
            shapes[f"{self.name}.conv.v"] = (self.cout, self.cin, self.kernel)
        else:
            shapes[f"{self.name}.conv.weight"] = (self.cout, self.cin, self.kernel)
        shapes[f"{self.name}.conv.bias"] = (self.cout,)
        if self.norm is not None:
            shapes[f"{self.name}.norm.gamma"] = (self.cout,)
            shapes[f"{self.name}.norm.beta"] = (self.cout,)
        return shapes


@dataclass(frozen=True)
class ResidualSources:
    """Incoming connections of a block.

    ``sources`` index block outputs (0 = Conv1 output, i = output of block i).
    ``intra`` lists, per sub-block, which earlier features of the same block it
    reads (0 = block input, r = output of sub-block r); empty for topologies
    without intra-block connections.
    """

    sources: tuple[int, ...]
    combine: str  # "add" | "concat"
    intra: tuple[tuple[int, ...], ...] = ()

    @property
    def indegree(self) -> int:
        return len(self.sources)


def residual_sources(cfg: ModelConfig, block_index: int) -> ResidualSources:
    """Residual connectivity of block ``block_index`` (1-based, in [1, B])."""
    if not 1 <= block_index <= cfg.num_blocks:
        raise IndexError(f"block index {block_index} outside [1, {cfg.num_blocks}]")
    r = cfg.blocks[block_index - 1].sub_blocks
    dense_intra = tuple(tuple(range(k + 1)) for k in range(r))
    topo = cfg.topology
    if topo == "residual":
        return ResidualSources((block_index - 1,), "add")
    if topo == "dense_residual":
        return ResidualSources(tuple(range(block_index)), "add")
    if topo == "densenet":
        return ResidualSources((block_index - 1,), "concat", dense_intra)
    if topo == "densernet":
        return ResidualSources(tuple(range(block_index)), "concat", dense_intra)
    return ResidualSources((), "add")  # "none": plain stack, ablation only


def _plan(cfg: ModelConfig) -> list[ConvUnit]:
    gf = 2 if cfg.activation in GATED else 1
    wn = cfg.norm == "weight"
    norm = None if wn else cfg.norm

    def unit(name, cin, cout, spec_or_k, main=True, gated=True):
        k, s, d = (spec_or_k, 1, 1) if isinstance(spec_or_k, int) else (
            spec_or_k.kernel, spec_or_k.stride, spec_or_k.dilation)
        return ConvUnit(name, cin, cout * (gf if gated else 1), k, s, d, norm, wn, main)

    units = [unit("conv1", cfg.n_features, cfg.pre.channels, cfg.pre)]
    out_ch = [cfg.pre.channels]
    for i, spec in enumerate(cfg.blocks, start=1):
        src = residual_sources(cfg, i)
        c = spec.channels
        prefix = f"blocks.{i - 1}"
        cin = out_ch[-1]
        if cfg.topology == "densernet" and len(src.sources) > 1:
            units.append(unit(f"{prefix}.inproj", sum(out_ch[s] for s in src.sources), c, 1, main=False, gated=False))
            cin = c
        for r in range(spec.sub_blocks):
            if src.intra and r > 0:
                units.append(unit(f"{prefix}.dense.{r}", cin + r * c, c, 1, main=False, gated=False))
                sub_in = c
            else:
                sub_in = cin if r == 0 else c
            units.append(unit(f"{prefix}.sub.{r}", sub_in, c, spec))
        if src.combine == "add":
            for s in src.sources:
                units.append(unit(f"{prefix}.res.{s}", out_ch[s], c, 1, main=False))
        out_ch.append(c)
    conv2, conv3, conv4 = cfg.post
    units.append(unit("conv2", out_ch[-1], conv2.channels, conv2))
    units.append(unit("conv3", conv2.channels, conv3.channels, conv3))
    units.append(ConvUnit("conv4", conv3.channels, conv4.channels, conv4.kernel, norm=None))
    return units


class Model:
    """A built Jasper network.

    With ``materialize=False`` only parameter shapes are recorded, which is
    enough for counting and inspection of the full-size presets.
    """

    def __init__(self, cfg: ModelConfig, seed: int = 0, materialize: bool = True):
        self.cfg = cfg
        self.seed = seed
        self.dtype = np.dtype(cfg.dtype)
        self.units = {u.name: u for u in _plan(cfg)}
        self.shapes: dict[str, tuple[int, ...]] = {}
        for u in self.units.values():
            self.shapes.update(u.param_shapes())
        self.params: dict[str, Tensor] = {}
        self.norms: dict[str, NormParams] = {}
        self._folded: dict[str, tuple[np.ndarray, np.ndarray]] | None = None
        if materialize:
            self._init_params(seed)

    def _init_params(self, seed: int) -> None:
        for idx, u in enumerate(self.units.values()):
            rng = make_rng(seed, idx)
            fan_in = u.cin * u.kernel
            bound = 1 / math.sqrt(fan_in) if u.name == "conv4" else math.sqrt(6 / fan_in)
            w = rng.uniform(-bound, bound, size=(u.cout, u.cin, u.kernel)).astype(self.dtype)
            b = rng.uniform(-1 / math.sqrt(fan_in), 1 / math.sqrt(fan_in), size=u.cout).astype(self.dtype)
            if u.weight_norm:
                g, v = weight_norm_reparam(w)
                self._add(f"{u.name}.conv.g", g)
                self._add(f"{u.name}.conv.v", v)
            else:
                self._add(f"{u.name}.conv.weight", w)
            self._add(f"{u.name}.conv.bias", b)
            if u.norm is not None:
                np_ = NormParams.init(u.cout, self.dtype, name=f"{u.name}.norm.")
                self.params[f"{u.name}.norm.gamma"] = np_.gamma
                self.params[f"{u.name}.norm.beta"] = np_.beta
                self.norms[u.name] = np_

    def _add(self, name: str, arr: np.ndarray) -> None:
        self.params[name] = Tensor(np.asarray(arr, self.dtype), requires_grad=True, name=name)

    # --- state ---------------------------------------------------------------

    @property
    def materialized(self) -> bool:
        return bool(self.params)

    def param_arrays(self) -> dict[str, np.ndarray]:
        return {k: p.data for k, p in self.params.items()}

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for name, n in self.norms.items():
            if self.units[name].norm == "batch":
                out[f"{name}.norm.running_mean"] = n.running_mean
                out[f"{name}.norm.running_var"] = n.running_var
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {**self.param_arrays(), **self.buffers()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        expected = set(self.state_arrays())
        if set(arrays) != expected:
            missing = sorted(expected - set(arrays))
            extra = sorted(set(arrays) - expected)
            raise ValueError(f"parameter name mismatch; missing={missing[:5]} unexpected={extra[:5]}")
        current = self.state_arrays()
        for name, arr in arrays.items():
            if current[name].shape != arr.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {current[name].shape}")
            current[name][...] = arr
        self._folded = None

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    # --- forward -------------------------------------------------------------

    def _weight(self, u: ConvUnit) -> Tensor:
        if u.weight_norm:
            return weight_norm(self.params[f"{u.name}.conv.g"], self.params[f"{u.name}.conv.v"])
        return self.params[f"{u.name}.conv.weight"]

    def _fold(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        if self._folded is None:
            self._folded = {}
        if name not in self._folded:
            u = self.units[name]
            self._folded[name] = fold_batchnorm(
                self._weight(u).data, self.params[f"{name}.conv.bias"].data, self.norms[name]
            )
        return self._folded[name]

    def _unit(self, name, x, in_mask, out_mask, mode, fused=False) -> Tensor:
        u = self.units[name]
        masking = self.cfg.masking
        try:
            if masking in ("conv", "conv+bn"):
                x = apply_mask(x, in_mask)
            if fused and mode == "infer" and u.norm == "batch":
                w, b = self._fold(name)
                y = conv1d(x, Tensor(w), Tensor(b), u.stride, u.dilation)
                return apply_mask(y, out_mask) if masking in ("bn", "conv+bn") else y
            y = conv1d(x, self._weight(u), self.params[f"{name}.conv.bias"], u.stride, u.dilation)
            if u.norm == "batch":
                bn_mask = out_mask if masking in ("bn", "conv+bn") else None
                y = batch_norm(y, self.norms[name], mask=bn_mask, mode=mode)
            elif u.norm == "layer_masked":
                y = layer_norm_masked(y, self.params[f"{name}.norm.gamma"], self.params[f"{name}.norm.beta"], out_mask)
            return y
        except NonFiniteError as exc:
            raise NonFiniteError(f"{name}/{exc.op}", exc.where) from exc

    def _act_drop(self, y, rate, mode, rng_key) -> Tensor:
        y = activation(y, self.cfg.activation)
        rate = min(rate, self.cfg.max_dropout)
        if mode == "train" and rate > 0:
            y = dropout(y, rate, mode, make_rng(*rng_key))
        return y

    def forward(self, batch: PaddedBatch, mode: str = "infer", step: int = 0, fused: bool = False):
        """Return ``(log_probs [B, V, T'], out_lengths)`` with ``T' = ceil(T/2)``.

        ``fused`` (infer mode only) runs each conv+batch-norm pair as a single
        folded convolution.
        """
        if not self.materialized:
            raise RuntimeError("model parameters were not materialized")
        if mode not in ("train", "infer"):
            raise ValueError(f"unknown mode {mode!r}")
        cfg = self.cfg
        if batch.features.shape[1] != cfg.n_features:
            raise ValueError(f"expected {cfg.n_features} feature channels, got {batch.features.shape[1]}")
        layer = iter(range(10**9))

        def key():
            return (self.seed, step, next(layer))

        x = Tensor(batch.features.astype(self.dtype, copy=False))
        in_mask = batch.mask.astype(self.dtype, copy=False)
        lengths = conv_out_length(batch.lengths, cfg.pre.stride)
        t_out = int(conv_out_length(batch.features.shape[2], cfg.pre.stride))
        mask = sequence_mask(lengths, t_out, self.dtype)

        h = self._act_drop(self._unit("conv1", x, in_mask, mask, mode, fused), cfg.pre.dropout, mode, key())
        outs = [h]
        for i, spec in enumerate(cfg.blocks, start=1):
            src = residual_sources(cfg, i)
            prefix = f"blocks.{i - 1}"
            x_in = outs[-1]
            if cfg.topology == "densernet" and len(src.sources) > 1:
                x_in = self._unit(f"{prefix}.inproj", concat([outs[s] for s in src.sources]), mask, mask, mode, fused)
            feats = [x_in]
            h = x_in
            for r in range(spec.sub_blocks):
                if src.intra and r > 0:
                    h = self._unit(f"{prefix}.dense.{r}", concat(feats), mask, mask, mode, fused)
                y = self._unit(f"{prefix}.sub.{r}", h, mask, mask, mode, fused)
                if r == spec.sub_blocks - 1 and src.combine == "add" and src.sources:
                    res = [self._unit(f"{prefix}.res.{s}", outs[s], mask, mask, mode, fused) for s in src.sources]
                    y = add_n([y, *res])
                h = self._act_drop(y, spec.dropout, mode, key())
                feats.append(h)
            outs.append(h)
        conv2, conv3, _ = cfg.post
        h = self._act_drop(self._unit("conv2", h, mask, mask, mode, fused), conv2.dropout, mode, key())
        h = self._act_drop(self._unit("conv3", h, mask, mask, mode, fused), conv3.dropout, mode, key())
        logits = self._unit("conv4", h, mask, mask, mode, fused)
        return log_softmax(logits, axis=1), lengths

    __call__ = forward


def build(cfg: ModelConfig, seed: int = 0, materialize: bool = True) -> Model:
    return Model(cfg, seed, materialize)


def count_params(model: Model | ModelConfig) -> int:
    """Exact scalar parameter count (conv, bias, norm and projection weights; no running stats)."""
    if isinstance(model, ModelConfig):
        model = Model(model, materialize=False)
    return int(sum(math.prod(s) for s in model.shapes.values()))


def conv_layer_count(model: Model | ModelConfig) -> int:
    """Main-path convolutions (excludes 1x1 residual/dense projections): B*R + 4."""
    cfg = model if isinstance(model, ModelConfig) else model.cfg
    units = _plan(cfg)
    return sum(u.main for u in units)


def block_param_counts(model: Model | ModelConfig) -> dict[str, int]:
    if isinstance(model, ModelConfig):
        model = Model(model, materialize=False)
    counts: dict[str, int] = {}
    for name, shape in model.shapes.items():
        parts = name.split(".")
        key = ".".join(parts[:2]) if parts[0] == "blocks" else parts[0]
        counts[key] = counts.get(key, 0) + math.prod(shape)
    return counts


def receptive_field(cfg: ModelConfig) -> int:
    """Input frames seen by one output frame along the main path."""
    rf, jump = 1, 1
    for u in _plan(cfg):
        if u.main:
            rf += (u.kernel - 1) * u.dilation * jump
            jump *= u.stride
    return rf
