import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jasper.lm import EOS, BackoffLM, train_ngram
from jasper.metrics import (
    ErrorCounts,
    char_errors,
    corpus_wer,
    edit_distance,
    normalize_text,
    perplexity,
    read_wer_csv,
    word_errors,
    write_wer_csv,
)

tokens = st.lists(st.sampled_from("abcd"), max_size=7)


def test_identical_is_zero():
    assert word_errors("the cat sat", "the cat sat") == ErrorCounts(0, 0, 0, 3)


def test_toy_pair():
    e = word_errors("a b c", "a x c d")
    assert (e.substitutions, e.insertions, e.deletions) == (1, 1, 0)
    assert e.wer == pytest.approx(2 / 3)


def test_deletion_and_empty_reference():
    e = word_errors("a", "")
    assert (e.deletions, e.wer) == (1, 1.0)
    e = word_errors("", "x y")
    assert (e.insertions, e.wer) == (2, 2.0)
    assert word_errors("", "").wer == 0.0


def test_tie_break_prefers_substitution():
    # "a b" -> "b c": one alignment is S+S, another D+I; both cost 2
    e = edit_distance("ab", "bc")
    assert (e.substitutions, e.insertions, e.deletions) == (2, 0, 0)


def test_normalization():
    assert normalize_text("  Don't STOP, me-now!  ") == "don't stop me now"
    assert word_errors("Hello, World", "hello world").errors == 0


def test_cer():
    assert char_errors("abc", "abd").wer == pytest.approx(1 / 3)


@given(a=tokens, b=tokens, c=tokens)
@settings(max_examples=200, deadline=None)
def test_triangle(a, b, c):
    assert edit_distance(a, c).errors <= edit_distance(a, b).errors + edit_distance(b, c).errors


@given(a=tokens, b=tokens)
@settings(max_examples=200, deadline=None)
def test_symmetry(a, b):
    ab, ba = edit_distance(a, b), edit_distance(b, a)
    assert ab.errors == ba.errors
    assert ab.errors - ab.substitutions == ba.errors - ba.substitutions
    assert ab.insertions - ab.deletions == ba.deletions - ba.insertions == len(b) - len(a)


@given(a=tokens)
def test_self_distance_zero(a):
    assert edit_distance(a, a).errors == 0


def test_corpus_aggregate():
    total = corpus_wer([("a b c", "a x c d"), ("a", "")])
    assert total.errors == 3 and total.ref_len == 4


def test_wer_csv(tmp_path):
    path = tmp_path / "wer.csv"
    total = write_wer_csv(path, [("u1", "a b c", "a x c d"), ("u2", "d", "d")])
    assert total.wer == pytest.approx(0.5)
    assert read_wer_csv(path) == pytest.approx(0.5)
    lines = path.read_text().splitlines()
    assert lines[0] == "id,ref,hyp,S,I,D,wer"
    assert lines[1].startswith("u1,a b c,a x c d,1,1,0,")


def test_uniform_perplexity_equals_vocab_size():
    words = ["w1", "w2", "w3", "w4", EOS]
    lp = -math.log10(len(words))
    lm = BackoffLM(1, [{(w,): lp for w in words}])
    assert perplexity(lm, ["w1 w2", "w3", "w4 w4 w1"]) == pytest.approx(5.0)


def test_two_sentence_hand_value():
    # unigram KN on "a b" / "a": counts a2 b1 </s>2 over 5, vocab 4 (with <unk>), gamma = .75*3/5
    lm = train_ngram(["a b", "a"], 1)
    pa = 1.25 / 5 + 0.45 / 4
    pb = 0.25 / 5 + 0.45 / 4
    pe = 1.25 / 5 + 0.45 / 4
    expected = (pa * pb * pe * pa * pe) ** (-1 / 5)
    assert perplexity(lm, ["a b", "a"]) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(3.2388, abs=1e-4)


def test_perplexity_bound_and_errors():
    lm = train_ngram(["x y z"], 2)
    assert perplexity(lm, ["x y z"]) <= len(lm.vocab - {"<s>"})
    with pytest.raises(ValueError, match="empty"):
        perplexity(lm, [])
