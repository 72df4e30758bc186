"""Word/character error rates and language-model perplexity."""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ErrorCounts:
    substitutions: int = 0
    insertions: int = 0
    deletions: int = 0
    ref_len: int = 0

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    @property
    def wer(self) -> float:
        """``(S + I + D) / ref_len``; an empty reference divides by 1."""
        return self.errors / max(1, self.ref_len)

    def __add__(self, other: "ErrorCounts") -> "ErrorCounts":
        return ErrorCounts(
            self.substitutions + other.substitutions,
            self.insertions + other.insertions,
            self.deletions + other.deletions,
            self.ref_len + other.ref_len,
        )


def edit_distance(ref, hyp) -> ErrorCounts:
    """Minimal Levenshtein alignment of token sequences.

    Among equally short alignments the backtrace prefers, at each step,
    substitution (or match) over insertion over deletion.
    """
    ref, hyp = list(ref), list(hyp)
    n, m = len(ref), len(hyp)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            d[i, j] = min(d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]), d[i, j - 1] + 1, d[i - 1, j] + 1)
    s = ins = dels = 0
    i, j = n, m
    while i or j:
        if i and j and d[i, j] == d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            s += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif j and d[i, j] == d[i, j - 1] + 1:
            ins += 1
            j -= 1
        else:
            dels += 1
            i -= 1
    return ErrorCounts(int(s), ins, dels, n)


_PUNCT = re.compile(r"[^\w\s']|_")


def normalize_text(text: str) -> str:
    """Lowercase, drop punctuation except apostrophes, collapse whitespace."""
    return " ".join(_PUNCT.sub(" ", text.lower()).split())


def word_errors(ref: str, hyp: str, normalize: bool = True) -> ErrorCounts:
    if normalize:
        ref, hyp = normalize_text(ref), normalize_text(hyp)
    return edit_distance(ref.split(), hyp.split())


def char_errors(ref: str, hyp: str, normalize: bool = True) -> ErrorCounts:
    if normalize:
        ref, hyp = normalize_text(ref), normalize_text(hyp)
    return edit_distance(ref, hyp)


def corpus_wer(pairs) -> ErrorCounts:
    """Aggregate counts over ``(ref, hyp)`` pairs."""
    total = ErrorCounts()
    for ref, hyp in pairs:
        total = total + word_errors(ref, hyp)
    return total


def perplexity(lm, sentences) -> float:
    """``10 ** (-(1/M) * sum log10 p)`` with ``M`` counting words plus one ``</s>`` per sentence."""
    total, count = 0.0, 0
    for s in sentences:
        words = s.split() if isinstance(s, str) else list(s)
        total += lm.score_sentence(words)
        count += len(words) + 1
    if count == 0:
        raise ValueError("empty corpus")
    return float(10.0 ** (-total / count))


WER_FIELDS = ("id", "ref", "hyp", "S", "I", "D", "wer")


def write_wer_csv(path, rows) -> ErrorCounts:
    """Write per-utterance rows for ``(id, ref, hyp)`` plus an ``__all__`` aggregate; returns the aggregate."""
    total = ErrorCounts()
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(WER_FIELDS)
        for utt, ref, hyp in rows:
            e = word_errors(ref, hyp)
            total = total + e
            w.writerow([utt, ref, hyp, e.substitutions, e.insertions, e.deletions, repr(e.wer)])
        w.writerow(["__all__", "", "", total.substitutions, total.insertions, total.deletions, repr(total.wer)])
    return total


def read_wer_csv(path) -> float:
    """Aggregate WER from a file written by ``write_wer_csv``."""
    with open(path, encoding="utf-8", newline="") as f:
        for row in csv.DictReader(f):
            if row["id"] == "__all__":
                return float(row["wer"])
    raise ValueError(f"{path}: no aggregate row")
