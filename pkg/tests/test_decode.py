import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jasper.ctc import Alphabet, greedy_decode
from jasper.decode import (
    Hypothesis,
    NBestList,
    beam_search,
    exhaustive_search,
    external_lm_scores,
    read_nbest,
    read_scores,
    rescore,
    write_nbest,
    write_scores,
)
from jasper.lm import train_ngram

AB = Alphabet(("a", "b"))
AB_SPACE = Alphabet(("a", "b", " "))


def random_lp(rng, v, t):
    x = rng.normal(size=(v, t)) * 2
    return x - np.log(np.exp(x).sum(axis=0, keepdims=True))


def test_exhaustive_match_t3_v3():
    rng = np.random.default_rng(0)
    for _ in range(20):
        lp = random_lp(rng, 3, 3)
        ref = exhaustive_search(lp, AB)
        got = beam_search(lp, AB, width=27)
        assert got.best.text == ref.best.text
        assert abs(got.best.score - ref.best.score) < 1e-9


@given(seed=st.integers(0, 2**32 - 1), t=st.integers(1, 6), use_lm=st.booleans())
@settings(max_examples=40, deadline=None)
def test_unbounded_width_equals_enumeration(seed, t, use_lm):
    rng = np.random.default_rng(seed)
    lp = random_lp(rng, 4, t)
    lm = train_ngram(["a b", "ab ba", "b"], 2) if use_lm else None
    alpha, beta = (0.7, 0.4) if use_lm else (0.0, 0.0)
    ref = exhaustive_search(lp, AB_SPACE, lm, alpha, beta)
    got = beam_search(lp, AB_SPACE, lm, width=None, alpha=alpha, beta=beta)
    assert [h.text for h in got.hyps] == [h.text for h in ref.hyps]
    np.testing.assert_allclose([h.score for h in got.hyps], [h.score for h in ref.hyps], atol=1e-9, rtol=0)


def test_width_one_differs_from_greedy():
    # frame 1: a .6, b .2, blank .2; frame 2: a .3, b .4, blank .3
    lp = np.log(np.array([[0.6, 0.3], [0.2, 0.4], [0.2, 0.3]]))
    assert greedy_decode(lp[None], [2], AB) == ["ab"]
    top = beam_search(lp, AB, width=1).best
    assert top.text == "a"
    assert math.exp(top.acoustic) == pytest.approx(0.42)  # aa + a- + -a
    assert exhaustive_search(lp, AB).best.text == "a"


def test_wider_beam_can_score_lower():
    """Beam search is not monotone in width in general: the extra prefix kept at
    width 2 changes which candidates survive later pruning."""
    p = np.array([[0.19, 0.19, 0.62], [0.31, 0.30, 0.39], [0.14, 0.50, 0.36]]).T
    lp = np.log(p)
    tops = [beam_search(lp, AB, width=w).best for w in (1, 2, 3)]
    assert [h.text for h in tops] == ["b", "ab", "b"]
    assert tops[1].score < tops[0].score
    assert exhaustive_search(lp, AB).best.text == "b"


@given(seed=st.integers(0, 2**32 - 1), use_lm=st.booleans())
@settings(max_examples=40, deadline=None)
def test_exhaustive_bounds_every_width(seed, use_lm):
    rng = np.random.default_rng(seed)
    lp = random_lp(rng, 4, 6)
    lm = train_ngram(["a b", "ab ba", "b"], 2) if use_lm else None
    alpha = 0.5 if use_lm else 0.0
    best = beam_search(lp, AB_SPACE, lm, width=None, alpha=alpha, beta=0.2).best.score
    for w in (1, 2, 4, 8, 16):
        assert beam_search(lp, AB_SPACE, lm, width=w, alpha=alpha, beta=0.2).best.score <= best + 1e-9


def test_top1_monotone_on_peaked_outputs():
    # confident per-frame posteriors, as produced by a converged model
    rng = np.random.default_rng(11)
    lm = train_ngram(["a b", "ab ba", "b"], 2)
    for _ in range(20):
        lp = random_lp(rng, 4, 10) * 4
        lp -= np.log(np.exp(lp).sum(axis=0, keepdims=True))
        scores = [beam_search(lp, AB_SPACE, lm, width=w, alpha=0.5, beta=0.2).best.score for w in range(1, 17)]
        assert all(b >= a - 1e-9 for a, b in zip(scores, scores[1:]))


def test_uniform_acoustics_strong_lm():
    lp = np.full((4, 3), np.log(0.25))
    lm = train_ngram(["ba", "ba", "ba", "ab", "a b"], 2)
    nb = beam_search(lp, AB_SPACE, lm, width=64, alpha=20.0)
    candidates = exhaustive_search(lp, AB_SPACE).hyps  # every collapsible string
    want = max(candidates, key=lambda h: (lm.score_sentence(h.text.split()), -len(h.text)))
    assert nb.best.text.split() == want.text.split() == ["ba"]


def test_no_lm_beam_matches_exhaustive_on_model_like_output():
    rng = np.random.default_rng(5)
    lp = random_lp(rng, 3, 9)
    assert beam_search(lp, AB, width=64).best.text == exhaustive_search(lp, AB).best.text


def test_beam_errors():
    lp = np.zeros((3, 2))
    with pytest.raises(ValueError, match="width"):
        beam_search(lp, AB, width=0)
    with pytest.raises(ValueError, match="finite"):
        beam_search(lp, AB, alpha=math.inf)
    with pytest.raises(ValueError, match="symbols"):
        beam_search(np.zeros((5, 2)), AB)


def nb_pair(s1, s2):
    return NBestList("u", [Hypothesis("one", s1, 0.0, 1, s1), Hypothesis("two", s2, 0.0, 1, s2)])


def test_rescore_zero_weight_keeps_order():
    rng = np.random.default_rng(1)
    nb = beam_search(random_lp(rng, 4, 6), AB_SPACE, width=8)
    out = rescore(nb, rng.normal(size=len(nb.hyps)), (1.0, 0.0, 0.0))
    assert [h.text for h in out.hyps] == [h.text for h in nb.hyps]


def test_rescore_crossover_weight():
    s1, s2, e1, e2 = -3.0, -4.5, -10.0, -6.0
    w_star = (s1 - s2) / (e2 - e1)  # 0.375
    assert rescore(nb_pair(s1, s2), [e1, e2], (1, w_star - 1e-6, 0)).best.text == "one"
    assert rescore(nb_pair(s1, s2), [e1, e2], (1, w_star + 1e-6, 0)).best.text == "two"


def test_rescore_tie_break_and_missing():
    out = rescore(nb_pair(-1.0, -1.0), [0.0, 0.0])
    assert [h.text for h in out.hyps] == ["one", "two"]
    tied = NBestList("u", [Hypothesis("zz", -1, 0, 1, -1), Hypothesis("aa", -1, 0, 1, -1)])
    assert rescore(tied, [0, 0]).best.text == "aa"
    with pytest.raises(ValueError, match="external scores"):
        rescore(nb_pair(-1, -2), [0.0])


def test_nbest_files_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    lm = train_ngram(["a b", "ab"], 2)
    lists = [
        beam_search(random_lp(rng, 4, 5), AB_SPACE, lm, width=4, alpha=0.5, beta=1.0, utt_id=f"u{i}")
        for i in range(3)
    ]
    write_nbest(tmp_path / "nb.tsv", lists)
    back = read_nbest(tmp_path / "nb.tsv")
    assert [nb.utt_id for nb in back] == ["u0", "u1", "u2"]
    for a, b in zip(lists, back):
        assert [h.text for h in a.hyps] == [h.text for h in b.hyps]
        np.testing.assert_allclose([h.score for h in b.hyps], [h.score for h in a.hyps], rtol=0, atol=1e-12)
    rows = external_lm_scores(back, lm)
    write_scores(tmp_path / "s.tsv", rows)
    per_list = read_scores(tmp_path / "s.tsv", back)
    assert [len(x) for x in per_list] == [len(nb.hyps) for nb in back]
    write_scores(tmp_path / "short.tsv", rows[:-1])
    with pytest.raises(ValueError, match="scores for"):
        read_scores(tmp_path / "short.tsv", back)
