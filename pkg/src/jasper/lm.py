"""Word N-gram language model: interpolated Kneser-Ney training and ARPA I/O.

The model is stored in backoff form: ``probs[n-1]`` maps n-gram tuples to
log10 probabilities and ``bows`` maps context tuples to log10 backoff
weights.  Sentences are wrapped as ``<s> w1 .. wn </s>``; ``<s>`` is never
predicted.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

BOS, EOS, UNK = "<s>", "</s>", "<unk>"
LOG10_ZERO = -99.0  # ARPA convention for log10(0)


class ArpaFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None, path=None):
        where = f"{path or '<arpa>'}" + (f":{line}" if line is not None else "")
        super().__init__(f"{where}: {message}")
        self.line = line


@dataclass
class BackoffLM:
    order: int
    probs: list[dict[tuple[str, ...], float]]
    bows: dict[tuple[str, ...], float] = field(default_factory=dict)

    def __post_init__(self):
        if self.order < 1 or len(self.probs) != self.order:
            raise ValueError("probs must hold one table per order")
        self.vocab = frozenset(w for (w,) in self.probs[0])

    def _map(self, w: str) -> str:
        return w if w in self.vocab else UNK

    def logprob(self, context, word: str) -> float:
        """log10 P(word | context) with backoff; OOV words map to ``<unk>``."""
        word = self._map(word)
        ctx = tuple(self._map(w) for w in context)[-(self.order - 1) :] if self.order > 1 else ()
        backoff = 0.0
        while True:
            p = self.probs[len(ctx)].get(ctx + (word,))
            if p is not None:
                return backoff + p
            if not ctx:
                return backoff + LOG10_ZERO  # no <unk> entry in this model
            backoff += self.bows.get(ctx, 0.0)
            ctx = ctx[1:]

    def state(self, words) -> tuple[str, ...]:
        """LM context after ``<s> words``: the last ``order - 1`` tokens."""
        if self.order == 1:
            return ()
        return ((BOS,) + tuple(words))[-(self.order - 1) :]

    def word_scores(self, words, eos: bool = True) -> list[float]:
        """Per-token log10 probabilities of ``words`` (and ``</s>``) after ``<s>``."""
        history = [BOS]
        out = []
        for w in list(words) + ([EOS] if eos else []):
            out.append(self.logprob(history, w))
            history.append(w)
        return out

    def score_sentence(self, words) -> float:
        """log10 P(words </s> | <s>)."""
        return sum(self.word_scores(words))

    def num_ngrams(self) -> list[int]:
        return [len(t) for t in self.probs]


def _sentences(corpus) -> list[list[str]]:
    if isinstance(corpus, str):
        corpus = corpus.splitlines()
    out = []
    for s in corpus:
        words = s.split() if isinstance(s, str) else list(s)
        if words:
            out.append(words)
    return out


def train_ngram(corpus, order: int, discount: float = 0.75) -> BackoffLM:
    """Interpolated Kneser-Ney with a fixed absolute discount.

    ``corpus`` is a sequence of sentences (strings or token lists).  The
    highest order uses raw counts; lower orders use continuation counts
    (number of distinct left neighbours), except n-grams starting with
    ``<s>``, which have no left neighbour and keep raw counts.  The unigram
    level interpolates with a uniform distribution over the vocabulary
    (including ``</s>`` and ``<unk>``), so every word has non-zero mass.
    """
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    if not 0 <= discount < 1:
        raise ValueError("discount must lie in [0, 1)")
    sents = _sentences(corpus)
    if not sents:
        raise ValueError("empty corpus")

    raw: list[Counter] = [Counter() for _ in range(order)]
    for words in sents:
        toks = [BOS] + words + [EOS]
        for n in range(1, order + 1):
            for i in range(len(toks) - n + 1):
                gram = tuple(toks[i : i + n])
                if gram != (BOS,):
                    raw[n - 1][gram] += 1

    counts: list[Counter] = [None] * order
    counts[order - 1] = raw[order - 1]
    for n in range(order - 1, 0, -1):
        cont = Counter()
        for gram in raw[n]:  # (n+1)-grams; drop the left word
            cont[gram[1:]] += 1
        for gram, c in raw[n - 1].items():
            if gram[0] == BOS:
                cont[gram] = c
        counts[n - 1] = cont

    vocab = sorted({w for s in sents for w in s} | {EOS, UNK})

    # per-context totals and distinct-continuation counts
    ctx_total: list[dict] = []
    ctx_types: list[dict] = []
    for n in range(order):
        tot, typ = defaultdict(float), defaultdict(int)
        for gram, c in counts[n].items():
            tot[gram[:-1]] += c
            typ[gram[:-1]] += 1
        ctx_total.append(tot)
        ctx_types.append(typ)

    def gamma(n, ctx):
        return discount * ctx_types[n][ctx] / ctx_total[n][ctx]

    lin: list[dict] = [dict() for _ in range(order)]
    uniform = 1.0 / len(vocab)
    g0 = gamma(0, ())
    for w in vocab:
        c = counts[0].get((w,), 0)
        lin[0][(w,)] = max(c - discount, 0) / ctx_total[0][()] + g0 * uniform

    def lower(n, gram):
        """Interpolated probability of ``gram`` at order ``n`` (0-based), resolving unseen n-grams."""
        while gram not in lin[n] and n > 0:
            ctx = gram[:-1]
            if ctx in ctx_total[n]:
                return gamma(n, ctx) * lower(n - 1, gram[1:])
            n, gram = n - 1, gram[1:]
        return lin[n].get(gram, 0.0)

    for n in range(1, order):
        for gram, c in counts[n].items():
            ctx = gram[:-1]
            lin[n][gram] = (c - discount) / ctx_total[n][ctx] + gamma(n, ctx) * lower(n - 1, gram[1:])

    probs = [{g: _log10(p) for g, p in sorted(t.items())} for t in lin]
    probs[0][(BOS,)] = LOG10_ZERO
    bows = {}
    for n in range(1, order):
        for ctx in ctx_total[n]:
            bows[ctx] = _log10(gamma(n, ctx))
    return BackoffLM(order, probs, dict(sorted(bows.items())))


def _log10(p: float) -> float:
    return math.log10(p) if p > 0 else LOG10_ZERO


def save_arpa(lm: BackoffLM, path) -> None:
    """Write standard ARPA text; values use shortest round-trip float repr."""
    lines = ["", "\\data\\"]
    lines += [f"ngram {n + 1}={len(t)}" for n, t in enumerate(lm.probs)]
    for n, table in enumerate(lm.probs):
        lines += ["", f"\\{n + 1}-grams:"]
        for gram, p in table.items():
            fields = [repr(p), " ".join(gram)]
            if gram in lm.bows:
                fields.append(repr(lm.bows[gram]))
            lines.append("\t".join(fields))
    lines += ["", "\\end\\", ""]
    Path(path).write_text("\n".join(lines), encoding="utf-8")


def load_arpa(path) -> BackoffLM:
    """Parse ARPA text; structural problems raise ``ArpaFormatError`` with a line number."""
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    declared: dict[int, int] = {}
    probs: list[dict] = []
    bows: dict = {}
    section = None  # None, "data", or n
    seen_data = seen_end = False
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        if seen_end:
            raise ArpaFormatError("content after \\end\\", lineno, path)
        if line == "\\data\\":
            section, seen_data = "data", True
            continue
        if line == "\\end\\":
            seen_end = True
            continue
        if line.startswith("\\") and line.endswith("-grams:"):
            if not seen_data:
                raise ArpaFormatError("n-gram section before \\data\\", lineno, path)
            try:
                n = int(line[1 : -len("-grams:")])
            except ValueError:
                raise ArpaFormatError(f"bad section header {line!r}", lineno, path) from None
            if n != len(probs) + 1 or n not in declared:
                raise ArpaFormatError(f"unexpected section {line!r}", lineno, path)
            probs.append({})
            section = n
            continue
        if section is None:
            raise ArpaFormatError(f"text outside any section: {line!r}", lineno, path)
        if section == "data":
            key, _, value = line.partition("=")
            parts = key.split()
            if len(parts) != 2 or parts[0] != "ngram" or not value.strip().isdigit() or not parts[1].isdigit():
                raise ArpaFormatError(f"malformed \\data\\ line {line!r}", lineno, path)
            declared[int(parts[1])] = int(value)
            continue
        fields = line.split()
        n = section
        if len(fields) not in (n + 1, n + 2):
            raise ArpaFormatError(f"expected {n + 1} or {n + 2} fields in {n}-gram entry, got {len(fields)}", lineno, path)
        try:
            p = float(fields[0])
            bow = float(fields[n + 1]) if len(fields) == n + 2 else None
        except ValueError:
            raise ArpaFormatError(f"non-numeric score in {line!r}", lineno, path) from None
        gram = tuple(fields[1 : n + 1])
        probs[n - 1][gram] = p
        if bow is not None:
            bows[gram] = bow
    if not seen_data:
        raise ArpaFormatError("missing \\data\\ header", None, path)
    if not seen_end:
        raise ArpaFormatError("missing \\end\\ marker", None, path)
    if sorted(declared) != list(range(1, len(declared) + 1)) or len(probs) != len(declared):
        raise ArpaFormatError(f"declared orders {sorted(declared)} but found {len(probs)} sections", None, path)
    for n, table in enumerate(probs, start=1):
        if len(table) != declared[n]:
            raise ArpaFormatError(f"\\data\\ declares {declared[n]} {n}-grams, section has {len(table)}", None, path)
    return BackoffLM(len(probs), probs, bows)
