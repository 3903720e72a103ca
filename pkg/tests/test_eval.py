import json

import pytest
from hypothesis import given, settings, strategies as st

from lasr.evaluation import (corpus_stats, corpus_wer, levenshtein_words, relative_improvement,
                             split_report, word_errors)

WORD = st.sampled_from(["a", "b", "c", "d"])


def brute_edit(h, r):
    """Plain exponential recursion over the three edit moves."""
    if not h:
        return len(r)
    if not r:
        return len(h)
    return min(brute_edit(h[1:], r[1:]) + (h[0] != r[0]),
               brute_edit(h[1:], r) + 1,
               brute_edit(h, r[1:]) + 1)


@settings(max_examples=300, deadline=None)
@given(st.lists(WORD, max_size=6), st.lists(WORD, max_size=6))
def test_edit_distance_equals_brute_force(h, r):
    s = levenshtein_words(h, r)
    assert s.errors == brute_edit(h, r)
    assert s.ref_words == len(r)
    # the backtrace is a valid alignment: ref = S + D + matched
    assert s.substitutions + s.deletions <= len(r)
    assert len(h) - s.insertions == len(r) - s.deletions


@settings(max_examples=100, deadline=None)
@given(st.lists(WORD, max_size=5), st.lists(WORD, max_size=5), st.lists(WORD, max_size=5))
def test_edit_distance_is_a_metric(a, b, c):
    d = lambda x, y: levenshtein_words(x, y).errors  # noqa: E731
    assert d(a, a) == 0
    assert d(a, b) == d(b, a)
    assert d(a, c) <= d(a, b) + d(b, c)


def test_wer_examples():
    assert word_errors("the cat", "the cat sat") == 1
    assert corpus_wer(["the cat"], ["the cat sat"]) == pytest.approx(100 / 3)
    assert corpus_wer([""], ["a b"]) == 100.0
    assert corpus_wer(["x y z a b"], ["a b"]) == 150.0
    s = levenshtein_words("a x c", "a b c")
    assert (s.substitutions, s.deletions, s.insertions) == (1, 0, 0)


def test_corpus_wer_is_pooled_not_mean():
    hyps, refs = ["a", "a b c d"], ["b", "a b c d"]
    # per-utterance mean would be 50%; pooled is 1/5
    assert corpus_wer(hyps, refs) == pytest.approx(20.0)
    assert corpus_stats(hyps, refs).ref_words == 5


def test_corpus_wer_errors():
    with pytest.raises(ValueError):
        corpus_wer(["a"], ["a", "b"])
    with pytest.raises(ValueError):
        corpus_wer([""], [""])


def test_relative_improvement_reported_values():
    assert relative_improvement(14.87, 9.37) == pytest.approx(36.9, abs=0.1)
    assert relative_improvement(14.87, 11.12) == pytest.approx(25.2, abs=0.1)
    assert relative_improvement(10.0, 12.0) == pytest.approx(-20.0)
    with pytest.raises(ValueError):
        relative_improvement(0.0, 1.0)


def _rows():
    return [{"id": "1", "text": "a b", "split": "clean"},
            {"id": "2", "text": "c d e", "split": "noisy"}]


def test_split_report():
    rep = split_report(_rows(), {"1": "a b", "2": "c"}, "sys", {"base": 80.0})
    assert rep.wer["clean"] == 0.0
    assert rep.wer["noisy"] == pytest.approx(200 / 3)
    assert rep.wer["all"] == pytest.approx(40.0)
    assert rep.improvements["base"] == pytest.approx(50.0)
    d = json.loads(rep.to_json())
    assert d["stats"]["noisy"] == {"S": 0, "D": 2, "I": 0, "N": 3}
    assert "rel. improvement vs base" in rep.table()


def test_split_report_rejects_unknown_tag():
    rows = _rows() + [{"id": "3", "text": "x", "split": "other"}]
    with pytest.raises(ValueError, match="other"):
        split_report(rows, {})


def test_missing_hypothesis_counts_as_deletions():
    rep = split_report(_rows(), {"1": "a b"})
    assert rep.stats["noisy"].deletions == 3
