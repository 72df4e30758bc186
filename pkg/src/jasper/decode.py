"""CTC prefix beam search with a word-level LM, and n-best rescoring.

Scores are natural-log.  For a hypothesis string ``y`` with words ``W``
(whitespace split)::

    score(y) = log p_ctc(y) + alpha * ln P_lm(W </s>) + beta * |W|

During the search, completed words are scored when a space is emitted; a
trailing partial word is charged the LM's ``<unk>`` probability so prefixes
stay comparable.  Final hypotheses are re-scored exactly (forward-only CTC
likelihood and the full sentence LM score), so with unbounded width the
result equals exhaustive enumeration.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, replace

import numpy as np

from .ctc import Alphabet, collapse, ctc_log_likelihood
from .lm import UNK, BackoffLM

LN10 = math.log(10.0)


@dataclass(frozen=True)
class Hypothesis:
    text: str
    acoustic: float  # ln p_ctc(text)
    lm: float  # ln P_lm(words </s>), 0 without an LM
    words: int
    score: float  # first-pass combined score


@dataclass
class NBestList:
    utt_id: str
    hyps: list[Hypothesis]
    alpha: float = 0.0
    beta: float = 0.0

    @property
    def best(self) -> Hypothesis:
        return self.hyps[0]


def _logaddexp(a: float, b: float) -> float:
    if a < b:
        a, b = b, a
    if b == -math.inf:
        return a
    return a + math.log1p(math.exp(b - a))


def _rank(hyps, key):
    return sorted(hyps, key=lambda h: (-key(h), h.text))


class _LMScorer:
    """Caches LM contributions of prefixes (keyed by the prefix text)."""

    def __init__(self, lm: BackoffLM | None, alpha: float, beta: float):
        self.lm, self.alpha, self.beta = lm, alpha, beta
        self._cache: dict[str, float] = {}

    def words_lm(self, words) -> float:
        return LN10 * self.lm.score_sentence(words) if self.lm is not None else 0.0

    def partial(self, text: str) -> float:
        """Search-time LM bonus for a prefix."""
        if self.lm is None or (self.alpha == 0 and self.beta == 0):
            return self.beta * len(text.split())
        hit = self._cache.get(text)
        if hit is not None:
            return hit
        words = text.split()
        done = words if text.endswith(" ") or not words else words[:-1]
        scores = self.lm.word_scores(done, eos=False)
        lm10 = sum(scores)
        if len(done) < len(words):
            lm10 += self.lm.logprob(self.lm.state(done), UNK)
        out = self.alpha * LN10 * lm10 + self.beta * len(words)
        self._cache[text] = out
        return out

    def final(self, text: str) -> tuple[float, int]:
        words = text.split()
        return self.words_lm(words), len(words)


def beam_search(
    log_probs: np.ndarray,
    alphabet: Alphabet,
    lm: BackoffLM | None = None,
    width: int | None = 2048,
    alpha: float = 0.0,
    beta: float = 0.0,
    nbest: int | None = None,
    utt_id: str = "",
) -> NBestList:
    """Prefix beam search over one utterance's ``log_probs[V, T]``.

    ``width=None`` keeps every prefix (exhaustive).  Returns up to ``nbest``
    hypotheses (default: the whole final beam) sorted by score, ties broken
    by text.
    """
    if alphabet.size < 2:
        raise ValueError("alphabet is empty")
    if width is not None and width < 1:
        raise ValueError("beam width must be >= 1")
    if not (math.isfinite(alpha) and math.isfinite(beta)):
        raise ValueError("alpha and beta must be finite")
    lp = np.asarray(log_probs, dtype=np.float64)
    v, t_len = lp.shape
    if v != alphabet.size:
        raise ValueError(f"log_probs has {v} symbols, alphabet has {alphabet.size}")
    blank = alphabet.blank_index
    scorer = _LMScorer(lm, alpha, beta)
    text_of: dict[tuple, str] = {}

    def text(prefix):
        out = text_of.get(prefix)
        if out is None:
            out = text_of[prefix] = alphabet.decode(prefix)
        return out

    beams: dict[tuple, list[float]] = {(): [0.0, -math.inf]}  # prefix -> [p_blank, p_nonblank]
    for t in range(t_len):
        col = lp[:, t].tolist()
        nxt: dict[tuple, list[float]] = {}

        def add(prefix, which, value):
            if value == -math.inf:
                return
            cell = nxt.get(prefix)
            if cell is None:
                nxt[prefix] = [value, -math.inf] if which == 0 else [-math.inf, value]
            else:
                cell[which] = _logaddexp(cell[which], value)

        for prefix, (pb, pnb) in beams.items():
            total = _logaddexp(pb, pnb)
            add(prefix, 0, total + col[blank])
            last = prefix[-1] if prefix else None
            for c in range(v):
                if c == blank:
                    continue
                if c == last:
                    add(prefix, 1, pnb + col[c])
                    add(prefix + (c,), 1, pb + col[c])
                else:
                    add(prefix + (c,), 1, total + col[c])
        if width is not None and len(nxt) > width:
            scored = sorted(
                nxt.items(),
                key=lambda kv: (-(_logaddexp(*kv[1]) + scorer.partial(text(kv[0]))), kv[0]),
            )
            nxt = dict(scored[:width])
        beams = nxt

    hyps = []
    for prefix in beams:
        s = text(prefix)
        ac = ctc_log_likelihood(lp, list(prefix), blank)
        lm_ln, n_words = scorer.final(s)
        hyps.append(Hypothesis(s, ac, lm_ln, n_words, ac + alpha * lm_ln + beta * n_words))
    hyps = _rank(hyps, lambda h: h.score)
    return NBestList(utt_id, hyps[:nbest] if nbest else hyps, alpha, beta)


def exhaustive_search(log_probs: np.ndarray, alphabet: Alphabet, lm=None, alpha=0.0, beta=0.0) -> NBestList:
    """Reference decoder: enumerate all V^T paths, sum per collapsed string, then score."""
    lp = np.asarray(log_probs, dtype=np.float64)
    v, t_len = lp.shape
    if v**t_len > 10**6:
        raise ValueError("instance too large for enumeration")
    blank = alphabet.blank_index
    mass: dict[tuple, list[float]] = {}
    for path in itertools.product(range(v), repeat=t_len):
        mass.setdefault(tuple(collapse(path, blank)), []).append(sum(lp[k, t] for t, k in enumerate(path)))
    scorer = _LMScorer(lm, alpha, beta)
    hyps = []
    for labels, terms in mass.items():
        s = alphabet.decode(labels)
        ac = float(np.logaddexp.reduce(terms))
        lm_ln, n = scorer.final(s)
        hyps.append(Hypothesis(s, ac, lm_ln, n, ac + alpha * lm_ln + beta * n))
    return NBestList("", _rank(hyps, lambda h: h.score), alpha, beta)


def rescore(nbest: NBestList, external, weights=(1.0, 1.0, 0.0)) -> NBestList:
    """Re-rank with ``w_am * first_pass + w_lm * external + w_wc * words``.

    ``first_pass`` is each hypothesis' combined acoustic plus n-gram score.
    ``external`` holds one log-probability per hypothesis in list order.  The
    returned hypotheses carry the rescored value in ``score``.
    """
    external = list(external)
    if len(external) != len(nbest.hyps):
        raise ValueError(
            f"utterance {nbest.utt_id!r}: {len(nbest.hyps)} hypotheses but {len(external)} external scores"
        )
    w_am, w_lm, w_wc = weights
    rescored = [
        replace(h, score=w_am * h.score + w_lm * float(e) + w_wc * h.words) for h, e in zip(nbest.hyps, external)
    ]
    return NBestList(nbest.utt_id, _rank(rescored, lambda h: h.score), nbest.alpha, nbest.beta)


# --- n-best exchange files ---------------------------------------------------
#
# n-best TSV: an optional "# alpha=<a> beta=<b>" line, then one hypothesis per
# line: utt_id, acoustic (ln), ngram (ln), word count, hypothesis text.
# External scores TSV: utt_id, score; one line per n-best line, same order.


def write_nbest(path, lists: list[NBestList]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        if lists:
            f.write(f"# alpha={lists[0].alpha!r} beta={lists[0].beta!r}\n")
        w = csv.writer(f, delimiter="\t", lineterminator="\n")
        for nb in lists:
            for h in nb.hyps:
                w.writerow([nb.utt_id, repr(h.acoustic), repr(h.lm), h.words, h.text])


def read_nbest(path) -> list[NBestList]:
    alpha = beta = 0.0
    out: dict[str, NBestList] = {}
    with open(path, encoding="utf-8", newline="") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if line.startswith("#"):
                for item in line[1:].split():
                    key, _, val = item.partition("=")
                    if key == "alpha":
                        alpha = float(val)
                    elif key == "beta":
                        beta = float(val)
                continue
            fields = line.split("\t")
            if len(fields) != 5:
                raise ValueError(f"{path}:{lineno}: expected 5 tab-separated fields, got {len(fields)}")
            utt, ac, ng, wc, text = fields
            try:
                ac, ng, wc = float(ac), float(ng), int(wc)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: malformed score fields") from None
            nb = out.setdefault(utt, NBestList(utt, [], alpha, beta))
            nb.hyps.append(Hypothesis(text, ac, ng, wc, ac + alpha * ng + beta * wc))
    return list(out.values())


def write_scores(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, delimiter="\t", lineterminator="\n")
        for utt, score in rows:
            w.writerow([utt, repr(float(score))])


def read_scores(path, lists: list[NBestList]) -> list[list[float]]:
    """Read external scores and split them per n-best list, checking ids line by line."""
    rows = []
    with open(path, encoding="utf-8", newline="") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            fields = line.rstrip("\n").split("\t")
            if len(fields) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'id<TAB>score'")
            rows.append((fields[0], float(fields[1])))
    expected = [nb.utt_id for nb in lists for _ in nb.hyps]
    if len(rows) != len(expected):
        raise ValueError(f"{path}: {len(rows)} scores for {len(expected)} hypotheses")
    for i, ((utt, _), want) in enumerate(zip(rows, expected), start=1):
        if utt != want:
            raise ValueError(f"{path}:{i}: score for {utt!r} where {want!r} expected")
    out, pos = [], 0
    for nb in lists:
        out.append([s for _, s in rows[pos : pos + len(nb.hyps)]])
        pos += len(nb.hyps)
    return out


def external_lm_scores(lists: list[NBestList], lm: BackoffLM) -> list[tuple[str, float]]:
    """Stand-in external scorer: natural-log sentence probability under ``lm``."""
    return [(nb.utt_id, LN10 * lm.score_sentence(h.text.split())) for nb in lists for h in nb.hyps]
