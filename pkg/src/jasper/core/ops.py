"""Differentiable ops used by the Jasper network.

Activations are laid out ``[batch, channel, time]``. Masks are ``[batch, 1, time]``
arrays of 0/1 in the activation dtype.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import as_strided
from scipy.special import expit

from .tensor import Tensor, as_tensor, check_finite, make_op


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based Philox generator keyed by ``(seed, *stream)``.

    Keying by stream (e.g. step and layer index) makes dropout masks
    reproducible regardless of how many draws happened before.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *stream])))


def sequence_mask(lengths, t_max: int, dtype=np.float64) -> np.ndarray:
    lengths = np.asarray(lengths)
    return (np.arange(t_max)[None, :] < lengths[:, None]).astype(dtype)[:, None, :]


def same_padding(kernel: int, dilation: int = 1) -> int:
    return dilation * (kernel - 1) // 2


def conv_out_length(length, stride: int):
    return -(-np.asarray(length) // stride)


# --- convolution -----------------------------------------------------------


def _windows(xp: np.ndarray, k: int, stride: int, dilation: int, t_out: int) -> np.ndarray:
    b, c, _ = xp.shape
    sb, sc, st = xp.strides
    return as_strided(xp, shape=(b, c, t_out, k), strides=(sb, sc, st * stride, st * dilation), writeable=False)


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, dilation: int = 1) -> Tensor:
    """1D convolution with symmetric zero "same" padding; output length ceil(T/stride)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 3 or w.data.ndim != 3:
        raise ValueError(f"conv1d expects x[B,Cin,T] and w[Cout,Cin,K], got {x.shape} and {w.shape}")
    bsz, cin, t = x.shape
    cout, wcin, k = w.shape
    if wcin != cin:
        raise ValueError(f"conv1d channel mismatch: input has {cin}, weight expects {wcin}")
    if k % 2 == 0:
        raise ValueError(f"same padding needs an odd kernel, got {k}")
    if stride < 1 or dilation < 1:
        raise ValueError("stride and dilation must be >= 1")
    if b is not None and b.shape != (cout,):
        raise ValueError(f"bias shape {b.shape} does not match {cout} output channels")

    pad = same_padding(k, dilation)
    t_out = int(conv_out_length(t, stride))
    if k == 1 and stride == 1:
        cols = x.data.transpose(0, 2, 1).reshape(bsz * t, cin)
    else:
        xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad))) if pad else x.data
        cols = _windows(xp, k, stride, dilation, t_out).transpose(0, 2, 1, 3).reshape(bsz * t_out, cin * k)
    wm = w.data.reshape(cout, cin * k)
    out = cols @ wm.T
    if b is not None:
        out += b.data
    out = out.reshape(bsz, t_out, cout).transpose(0, 2, 1)

    def _backward(g):
        g2 = g.transpose(0, 2, 1).reshape(bsz * t_out, cout)
        dw = (g2.T @ cols).reshape(w.shape) if w.requires_grad else None
        db = g.sum(axis=(0, 2)) if b is not None and b.requires_grad else None
        dx = None
        if x.requires_grad:
            dcols = g2 @ wm
            if k == 1 and stride == 1:
                dx = dcols.reshape(bsz, t, cin).transpose(0, 2, 1)
            else:
                dcols = dcols.reshape(bsz, t_out, cin, k).transpose(0, 2, 1, 3)
                dxp = np.zeros((bsz, cin, t + 2 * pad), dtype=g.dtype)
                span = stride * (t_out - 1) + 1
                for j in range(k):
                    off = j * dilation
                    dxp[:, :, off : off + span : stride] += dcols[..., j]
                dx = dxp[:, :, pad : pad + t]
        return (dx, dw) if b is None else (dx, dw, db)

    parents = (x, w) if b is None else (x, w, b)
    return make_op(np.ascontiguousarray(out), parents, _backward, "conv1d")


# --- normalization ---------------------------------------------------------


@dataclass
class NormParams:
    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    epsilon: float = 1e-5

    @classmethod
    def init(cls, channels: int, dtype=np.float64, momentum: float = 0.1, epsilon: float = 1e-5, name: str = ""):
        return cls(
            gamma=Tensor(np.ones(channels, dtype), requires_grad=True, name=f"{name}gamma"),
            beta=Tensor(np.zeros(channels, dtype), requires_grad=True, name=f"{name}beta"),
            running_mean=np.zeros(channels, dtype),
            running_var=np.ones(channels, dtype),
            momentum=momentum,
            epsilon=epsilon,
        )


def batch_norm(x: Tensor, params: NormParams, mask: np.ndarray | None = None, mode: str = "train") -> Tensor:
    """Per-channel batch norm over (batch x time).

    With a mask, train-mode statistics use only frames where mask=1 and the
    output is zeroed on padded frames. Train mode also updates the running
    statistics in place (exponential moving average, unbiased variance).
    """
    if params.epsilon <= 0:
        raise ValueError("batch norm epsilon must be > 0")
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown mode {mode!r}")
    gamma, beta, eps = params.gamma, params.beta, params.epsilon
    xd = x.data
    g3 = gamma.data[None, :, None]

    if mode == "infer":
        inv = 1.0 / np.sqrt(params.running_var + eps)
        xhat = (xd - params.running_mean[None, :, None]) * inv[None, :, None]
        out = g3 * xhat + beta.data[None, :, None]
        if mask is not None:
            out = out * mask

        def _backward_infer(g):
            if mask is not None:
                g = g * mask
            return (g * (g3 * inv[None, :, None]), (g * xhat).sum(axis=(0, 2)), g.sum(axis=(0, 2)))

        return make_op(out, (x, gamma, beta), _backward_infer, "batch_norm")

    if mask is None:
        n = xd.shape[0] * xd.shape[2]
        mean = xd.mean(axis=(0, 2))
        xc = xd - mean[None, :, None]
        var = (xc * xc).mean(axis=(0, 2))
    else:
        n = float(mask.sum())
        if n == 0:
            raise ValueError("batch norm: no valid frames in batch")
        mean = (xd * mask).sum(axis=(0, 2)) / n
        xc = xd - mean[None, :, None]
        var = (xc * xc * mask).sum(axis=(0, 2)) / n
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv[None, :, None]
    out = g3 * xhat + beta.data[None, :, None]
    if mask is not None:
        out = out * mask

    m = params.momentum
    unbiased = var * (n / (n - 1)) if n > 1 else var
    params.running_mean *= 1 - m
    params.running_mean += m * mean
    params.running_var *= 1 - m
    params.running_var += m * unbiased

    def _backward(g):
        if mask is not None:
            g = g * mask
        dgamma = (g * xhat).sum(axis=(0, 2))
        dbeta = g.sum(axis=(0, 2))
        dxhat = g * g3
        mean_dxhat = dxhat.sum(axis=(0, 2)) / n
        mean_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2)) / n
        dx = (dxhat - mean_dxhat[None, :, None] - xhat * mean_dxhat_xhat[None, :, None]) * inv[None, :, None]
        if mask is not None:
            dx = dx * mask
        return dx, dgamma, dbeta

    return make_op(out, (x, gamma, beta), _backward, "batch_norm")


def layer_norm_masked(x: Tensor, gamma: Tensor, beta: Tensor, mask: np.ndarray, epsilon: float = 1e-5) -> Tensor:
    """Per-sequence normalization over channels and valid time; padded frames are zeroed."""
    if mask is None:
        raise ValueError("layer_norm_masked needs a mask")
    xd = x.data
    c = xd.shape[1]
    n = c * mask.sum(axis=(1, 2))  # [B]
    if np.any(n == 0):
        bad = np.flatnonzero(n == 0).tolist()
        raise ValueError(f"layer norm: sequences {bad} have no valid frames")
    mean = (xd * mask).sum(axis=(1, 2)) / n
    xc = xd - mean[:, None, None]
    var = (xc * xc * mask).sum(axis=(1, 2)) / n
    inv = 1.0 / np.sqrt(var + epsilon)
    xhat = xc * inv[:, None, None]
    g3 = gamma.data[None, :, None]
    out = (g3 * xhat + beta.data[None, :, None]) * mask

    def _backward(g):
        g = g * mask
        dgamma = (g * xhat).sum(axis=(0, 2))
        dbeta = g.sum(axis=(0, 2))
        dxhat = g * g3
        mean_dxhat = dxhat.sum(axis=(1, 2)) / n
        mean_dxhat_xhat = (dxhat * xhat).sum(axis=(1, 2)) / n
        dx = (dxhat - mean_dxhat[:, None, None] - xhat * mean_dxhat_xhat[:, None, None]) * inv[:, None, None]
        return dx * mask, dgamma, dbeta

    return make_op(out, (x, gamma, beta), _backward, "layer_norm")


def weight_norm_reparam(w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split ``w[Cout, ...]`` into per-output-channel magnitude g and direction v."""
    w = np.asarray(w)
    g = np.sqrt((w.reshape(w.shape[0], -1) ** 2).sum(axis=1))
    if np.any(g == 0):
        raise ValueError("weight norm: zero-norm direction vector")
    return g, w.copy()


def weight_norm(g: Tensor, v: Tensor) -> Tensor:
    """Rebuild ``w = g * v / ||v||`` with the norm taken per output channel."""
    vd = v.data
    extra = (slice(None),) + (None,) * (vd.ndim - 1)
    norm = np.sqrt((vd.reshape(vd.shape[0], -1) ** 2).sum(axis=1))
    if np.any(norm == 0):
        raise ValueError("weight norm: zero-norm direction vector")
    u = vd / norm[extra]
    out = g.data[extra] * u

    def _backward(gw):
        axes = tuple(range(1, vd.ndim))
        dg = (gw * u).sum(axis=axes)
        proj = (gw * u).sum(axis=axes)[extra]
        dv = (g.data / norm)[extra] * (gw - u * proj)
        return dg, dv

    return make_op(out, (g, v), _backward, "weight_norm")


# --- activations -----------------------------------------------------------

ACTIVATIONS = ("relu", "crelu", "lrelu", "glu", "gau")
GATED = ("glu", "gau")


def activation(x: Tensor, kind: str = "relu", clip: float = 20.0, slope: float = 0.01) -> Tensor:
    xd = x.data
    if kind == "relu":
        keep = xd > 0
        return make_op(np.where(keep, xd, 0.0), (x,), lambda g: (g * keep,), "relu")
    if kind == "crelu":
        keep = (xd > 0) & (xd < clip)
        return make_op(np.clip(xd, 0.0, clip), (x,), lambda g: (g * keep,), "crelu")
    if kind == "lrelu":
        d = np.where(xd > 0, 1.0, slope)
        return make_op(xd * d, (x,), lambda g: (g * d,), "lrelu")
    if kind in GATED:
        c = xd.shape[1]
        if c % 2:
            raise ValueError(f"{kind} needs an even channel count, got {c}")
        a, b = xd[:, : c // 2], xd[:, c // 2 :]
        sb = expit(b)
        fa = a if kind == "glu" else np.tanh(a)
        out = fa * sb

        def _backward(g):
            dfa = np.ones_like(a) if kind == "glu" else 1.0 - fa * fa
            return (np.concatenate([g * sb * dfa, g * fa * sb * (1.0 - sb)], axis=1),)

        return make_op(out, (x,), _backward, kind)
    raise ValueError(f"unknown activation {kind!r}; choose from {ACTIVATIONS}")


def dropout(x: Tensor, rate: float, mode: str = "train", rng: np.random.Generator | int | None = None) -> Tensor:
    """Inverted dropout: survivors scaled by 1/(1-rate); identity in infer mode."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "infer" or rate == 0:
        return x
    if not isinstance(rng, np.random.Generator):
        rng = make_rng(0 if rng is None else int(rng))
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    keep = keep.astype(x.dtype)
    return make_op(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


def apply_mask(x: Tensor, mask: np.ndarray | None) -> Tensor:
    if mask is None:
        return x
    return make_op(np.where(mask > 0, x.data, 0.0), (x,), lambda g: (g * mask,), "mask")


def log_softmax(x: Tensor, axis: int = 1) -> Tensor:
    check_finite(x.data, "log_softmax", "input")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)
    return make_op(out, (x,), lambda g: (g - probs * g.sum(axis=axis, keepdims=True),), "log_softmax")


# --- inference folding -----------------------------------------------------


def fold_batchnorm(w: np.ndarray, b: np.ndarray | None, bn: NormParams) -> tuple[np.ndarray, np.ndarray]:
    """Fold an inference-mode batch norm into the preceding conv's weight and bias."""
    if np.any(bn.running_var < 0):
        raise ValueError("running_var has negative entries")
    scale = bn.gamma.data / np.sqrt(bn.running_var + bn.epsilon)
    bias = np.zeros(w.shape[0], dtype=w.dtype) if b is None else b
    return w * scale[:, None, None], (bias - bn.running_mean) * scale + bn.beta.data
