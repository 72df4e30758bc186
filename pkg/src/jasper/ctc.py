"""CTC loss via log-space forward-backward, a brute-force oracle, and greedy decoding."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .core.tensor import Tensor, make_op

log = logging.getLogger(__name__)

DEFAULT_GRAPHEMES = tuple("abcdefghijklmnopqrstuvwxyz") + (" ", "'")


class CTCInfeasibleError(ValueError):
    """One or more targets need more frames than the model emitted."""

    def __init__(self, items: list[int]):
        self.items = items
        super().__init__(f"targets infeasible for batch items {items}: too few output frames")


@dataclass(frozen=True)
class Alphabet:
    """Grapheme inventory; the CTC blank takes the index after the last grapheme."""

    graphemes: tuple[str, ...] = DEFAULT_GRAPHEMES

    def __post_init__(self):
        object.__setattr__(self, "graphemes", tuple(self.graphemes))
        if not self.graphemes:
            raise ValueError("alphabet is empty")
        if len(set(self.graphemes)) != len(self.graphemes):
            raise ValueError("alphabet symbols must be unique")

    @property
    def blank_index(self) -> int:
        return len(self.graphemes)

    @property
    def size(self) -> int:
        """Number of model outputs including blank."""
        return len(self.graphemes) + 1

    def encode(self, text: str) -> list[int]:
        index = {g: i for i, g in enumerate(self.graphemes)}
        try:
            return [index[ch] for ch in text]
        except KeyError as exc:
            raise ValueError(f"symbol {exc.args[0]!r} not in alphabet") from None

    def decode(self, indices) -> str:
        return "".join(self.graphemes[i] for i in indices)


def min_frames(target) -> int:
    """Shortest alignment: one frame per label plus a blank between repeats."""
    target = list(target)
    return len(target) + sum(a == b for a, b in zip(target, target[1:]))


def _shift(a: np.ndarray, k: int) -> np.ndarray:
    out = np.full_like(a, -np.inf)
    out[k:] = a[:-k] if k else a
    return out


def _forward(lp: np.ndarray, target: np.ndarray, blank: int):
    """Alpha recursion over the blank-interleaved target; returns ``(ext, skip, alpha)``."""
    t_len = lp.shape[1]
    ext = np.full(2 * len(target) + 1, blank, dtype=np.int64)
    ext[1::2] = target
    s_len = len(ext)
    skip = np.zeros(s_len, dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    emit = lp[ext]  # [S, T]
    alpha = np.full((t_len, s_len), -np.inf)
    alpha[0, 0] = emit[0, 0]
    if s_len > 1:
        alpha[0, 1] = emit[1, 0]
    for t in range(1, t_len):
        prev = alpha[t - 1]
        two = np.where(skip, _shift(prev, 2), -np.inf)
        alpha[t] = np.logaddexp(np.logaddexp(prev, _shift(prev, 1)), two) + emit[:, t]
    return ext, skip, alpha


def ctc_log_likelihood(lp: np.ndarray, target, blank: int) -> float:
    """``log p(target | lp)`` by the forward pass alone; ``-inf`` when infeasible."""
    target = np.asarray(target, dtype=np.int64)
    if lp.shape[1] == 0:
        return 0.0 if len(target) == 0 else -np.inf
    if lp.shape[1] < min_frames(target):
        return -np.inf
    _, _, alpha = _forward(lp, target, blank)
    tail = alpha[-1, -2:] if alpha.shape[1] > 1 else alpha[-1, -1:]
    return float(logsumexp(tail))


def ctc_forward_backward(lp: np.ndarray, target, blank: int) -> tuple[float, np.ndarray]:
    """Negative log-likelihood of ``target`` under per-frame log-probs ``lp[V, T]``.

    Returns ``(nll, grad)`` where ``grad = d nll / d lp``. Infeasible targets
    give ``(inf, zeros)``.
    """
    v, t_len = lp.shape
    target = np.asarray(target, dtype=np.int64)
    if np.any(target == blank):
        raise ValueError("blank index present in target")
    if np.any((target < 0) | (target >= v)):
        raise ValueError("target index out of range")
    if t_len < min_frames(target):
        return float("inf"), np.zeros_like(lp)

    ext, skip, alpha = _forward(lp, target, blank)
    s_len = len(ext)
    emit = lp[ext]

    # beta[t, s]: log-prob of finishing from state s at frame t, emissions after t only
    beta = np.full((t_len, s_len), -np.inf)
    beta[-1, -1] = 0.0
    if s_len > 1:
        beta[-1, -2] = 0.0
    skip_from = np.zeros(s_len, dtype=bool)
    skip_from[:-2] = skip[2:]
    for t in range(t_len - 2, -1, -1):
        nxt = beta[t + 1] + emit[:, t + 1]
        one = np.full(s_len, -np.inf)
        one[:-1] = nxt[1:]
        two = np.full(s_len, -np.inf)
        two[:-2] = nxt[2:]
        beta[t] = np.logaddexp(np.logaddexp(nxt, one), np.where(skip_from, two, -np.inf))

    tail = alpha[-1, -2:] if s_len > 1 else alpha[-1, -1:]
    logp = float(logsumexp(tail))
    if not np.isfinite(logp):
        return float("inf"), np.zeros_like(lp)

    occ = np.full((v, t_len), -np.inf)
    np.logaddexp.at(occ, ext, (alpha + beta).T)
    grad = -np.exp(occ - logp)
    return -logp, grad


def ctc_item_losses(log_probs: np.ndarray, targets, out_lengths, blank: int | None = None):
    """Per-item NLL and gradient for a batch ``[B, V, T]``; frames past ``out_lengths`` are ignored."""
    bsz, v, t_max = log_probs.shape
    blank = v - 1 if blank is None else blank
    losses = np.empty(bsz)
    grads = np.zeros_like(log_probs)
    for b in range(bsz):
        n = int(out_lengths[b])
        if n > t_max:
            raise ValueError(f"out_length {n} exceeds {t_max} frames")
        losses[b], grads[b, :, :n] = ctc_forward_backward(log_probs[b, :, :n], targets[b], blank)
    return losses, grads


def ctc_loss(log_probs: Tensor, targets, out_lengths, blank: int | None = None, skip_infeasible: bool = False):
    """Mean CTC loss over the batch as a differentiable scalar.

    Returns ``(loss, per_item)``. Infeasible items raise ``CTCInfeasibleError``
    unless ``skip_infeasible`` is set, in which case they are dropped from the
    mean with a warning.
    """
    losses, grads = ctc_item_losses(log_probs.data, targets, out_lengths, blank)
    bad = np.flatnonzero(~np.isfinite(losses))
    if bad.size:
        if not skip_infeasible or bad.size == len(losses):
            raise CTCInfeasibleError(bad.tolist())
        log.warning("skipping infeasible CTC targets for batch items %s", bad.tolist())
    ok = np.isfinite(losses)
    n = int(ok.sum())
    grads[~ok] = 0.0
    value = np.asarray(losses[ok].sum() / n, dtype=log_probs.dtype)
    scaled = (grads / n).astype(log_probs.dtype)
    loss = make_op(value, (log_probs,), lambda g: (g * scaled,), "ctc_loss")
    return loss, losses


def collapse(path, blank: int) -> list[int]:
    """Merge repeats, then drop blanks."""
    out = []
    prev = None
    for p in path:
        p = int(p)
        if p != prev and p != blank:
            out.append(p)
        prev = p
    return out


def ctc_brute_force(lp: np.ndarray, target, blank: int | None = None, max_paths: int = 10**6) -> float:
    """Exact NLL by enumerating every frame-label path of ``lp[V, T]``."""
    v, t_len = lp.shape
    blank = v - 1 if blank is None else blank
    if v**t_len > max_paths:
        raise ValueError(f"instance too large for enumeration: {v}^{t_len} paths")
    target = [int(x) for x in target]
    if blank in target:
        raise ValueError("blank index present in target")
    terms = []
    for path in itertools.product(range(v), repeat=t_len):
        if collapse(path, blank) == target:
            terms.append(sum(lp[k, t] for t, k in enumerate(path)))
    if not terms:
        return float("inf")
    return -float(logsumexp(terms))


def greedy_decode(log_probs: np.ndarray, out_lengths, alphabet: Alphabet) -> list[str]:
    """Per-frame argmax (lowest index wins ties), collapse repeats, strip blanks."""
    log_probs = log_probs.data if isinstance(log_probs, Tensor) else np.asarray(log_probs)
    best = log_probs.argmax(axis=1)
    return [
        alphabet.decode(collapse(best[b, : int(out_lengths[b])], alphabet.blank_index))
        for b in range(len(best))
    ]
