import itertools
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from aidr.errors import InvalidInputError
from aidr.evaluation import (MetricReport, PredictionRecord, answer_accuracy, bleu1, evaluate, lcs_length,
                             percent, read_predictions, report_table, rouge_l, similarity, tokenize,
                             write_predictions)

words = st.lists(st.sampled_from("a b c d e f".split()), min_size=1, max_size=8)


def brute_lcs(a, b):
    """Longest common subsequence by enumerating subsequences of the shorter list."""
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    for k in range(len(short), 0, -1):
        for idx in itertools.combinations(range(len(short)), k):
            sub = [short[i] for i in idx]
            it = iter(long_)
            if all(any(x == y for y in it) for x in sub):
                return k
    return 0


def test_tokenize():
    assert tokenize("The cat, (A) sat!") == ["the", "cat", "a", "sat"]


class TestBleu:
    def test_identical(self):
        assert bleu1("the cat sat", "the cat sat") == 1.0

    def test_brevity(self):
        assert bleu1("the cat", "the cat sat") == pytest.approx(math.exp(1 - 3 / 2), abs=1e-12)
        assert bleu1("the cat", "the cat sat") == pytest.approx(0.60653, abs=1e-5)

    def test_disjoint(self):
        assert bleu1("dog runs", "the cat sat") == 0.0

    def test_clipping(self):
        assert bleu1("the the the", "the cat sat") == pytest.approx(1 / 3)

    def test_empty_candidate(self):
        assert bleu1("", "x y") == 0.0

    def test_empty_reference(self):
        with pytest.raises(InvalidInputError):
            bleu1("a", "...")

    def test_asymmetric(self):
        assert bleu1("the cat", "the cat sat") != bleu1("the cat sat", "the cat")


class TestRouge:
    def test_identical(self):
        assert rouge_l("a b c", "a b c") == 1.0

    def test_prefix(self):
        assert lcs_length(["the", "cat"], ["the", "cat", "sat"]) == brute_lcs(["the", "cat"], ["the", "cat", "sat"]) == 2
        assert rouge_l("the cat", "the cat sat") == pytest.approx(0.8, abs=1e-12)

    def test_reversed(self):
        ref = "a b c d e".split()
        cand = ref[::-1]
        lcs = brute_lcs(cand, ref)
        assert lcs == 1
        r, p = lcs / 5, lcs / 5
        assert rouge_l(cand, ref) == pytest.approx(2 * p * r / (p + r), abs=1e-12)

    def test_empty_reference(self):
        with pytest.raises(InvalidInputError):
            rouge_l("a", "")

    def test_asymmetric_recall(self):
        # F is symmetric in P and R, so asymmetry shows in recall: LCS/|ref|
        assert lcs_length("a b".split(), "a b c d".split()) / 4 != lcs_length("a b c d".split(), "a b".split()) / 2

    @given(words, words)
    def test_lcs_matches_brute_force(self, a, b):
        assert lcs_length(a, b) == brute_lcs(a, b)

    @given(words, words, st.data())
    def test_removing_match_never_raises_recall(self, cand, ref, data):
        base = lcs_length(cand, ref) / len(ref)
        i = data.draw(st.integers(0, len(cand) - 1))
        smaller = cand[:i] + cand[i + 1:]
        assert lcs_length(smaller, ref) / len(ref) <= base


class TestSimilarity:
    def test_identical(self):
        assert similarity("x y z", "x y z") == 1.0

    def test_disjoint(self):
        assert similarity("a b", "c d") == 0.0

    def test_tf_cosine(self):
        # (2*1 + 1*2) / (sqrt(5) * sqrt(5))
        assert similarity("a a b", "a b b") == pytest.approx(0.8, abs=1e-12)

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            similarity("", "a")

    @given(words, words)
    def test_symmetric(self, a, b):
        assert similarity(a, b) == similarity(b, a)

    @given(words, words)
    def test_ranges(self, a, b):
        for f in (bleu1, rouge_l, similarity):
            assert 0.0 <= f(a, b) <= 1.0

    @given(words)
    def test_one_iff_equal(self, a):
        assert bleu1(a, a) == rouge_l(a, a) == similarity(a, a) == 1.0
        assert similarity(a + a, a) == pytest.approx(1.0)
        if len(a) > 1:
            assert rouge_l(a[:-1], a) < 1.0 and bleu1(a[:-1], a) < 1.0


class TestAccuracy:
    def test_ratio(self):
        gold = {f"q{i}": i % 8 for i in range(100)}
        preds = [PredictionRecord(q, a if i >= 3 else (a + 1) % 8) for i, (q, a) in enumerate(gold.items())]
        assert answer_accuracy(preds, gold) == 0.97

    def test_failures_and_missing_count_wrong(self):
        gold = {"a": 1, "b": 2, "c": 3}
        preds = [PredictionRecord("a", 1), PredictionRecord("b", None)]
        assert answer_accuracy(preds, gold) == pytest.approx(1 / 3)

    def test_duplicates(self):
        with pytest.raises(InvalidInputError):
            answer_accuracy([PredictionRecord("a", 1), PredictionRecord("a", 2)], {"a": 1})


class TestEvaluate:
    def test_self_evaluation(self, taught_manifest):
        preds = [PredictionRecord(q.id, q.answer, q.rationale) for q in taught_manifest.questions]
        r = evaluate(preds, taught_manifest.questions)
        assert (r.a_acc, r.bleu1, r.rouge_l, r.similarity) == (1.0, 1.0, 1.0, 1.0)

    @pytest.mark.parametrize("k", [0, 1, 7, 40])
    def test_flip_k(self, taught_manifest, k):
        qs = taught_manifest.questions
        preds = [PredictionRecord(q.id, (q.answer + 1) % 8 if i < k else q.answer, q.rationale)
                 for i, q in enumerate(qs)]
        assert evaluate(preds, qs).a_acc == (len(qs) - k) / len(qs)

    def test_empty_rationales(self, taught_manifest):
        qs = taught_manifest.questions
        r = evaluate([PredictionRecord(q.id, q.answer, "") for q in qs], qs)
        assert r.a_acc == 1.0 and r.bleu1 == r.rouge_l == r.similarity == 0.0
        assert r.n_evaluated == len(qs) and r.n_rationales_scored == len(qs)

    def test_id_mismatch_reported(self, taught_manifest):
        qs = taught_manifest.questions
        preds = [PredictionRecord(q.id, q.answer, q.rationale) for q in qs[1:]] + [PredictionRecord("ghost", 0)]
        r = evaluate(preds, qs)
        assert r.n_missing == 1
        assert any("ghost" in i for i in r.issues) and any(qs[0].id in i for i in r.issues)

    def test_predictions_round_trip(self, tmp_path):
        preds = [PredictionRecord("a", 1, "r"), PredictionRecord("b", None, "", "junk")]
        write_predictions(preds, tmp_path / "p.jsonl")
        assert read_predictions(tmp_path / "p.jsonl") == preds


def report(x):
    return MetricReport(x, 0.7668, 0.8249, 0.9519, 10, 0)


class TestTable:
    def test_row_value(self):
        assert "| 98.43 |" in report_table([report(0.9843)], ["LLM-CoT"])

    def test_half_even(self):
        assert percent(0.97005) == "97.00"
        assert percent(0.97015) == "97.02"
        assert percent(1.0) == "100.00"

    def test_header(self):
        head = report_table([report(1.0)], ["x"]).splitlines()[0]
        assert [c.strip() for c in head.strip("|").split("|")][1:] == ["A-Acc", "BLEU-1", "ROUGE-L", "Similarity"]

    def test_needs_report(self):
        with pytest.raises(InvalidInputError):
            report_table([], [])

    @pytest.mark.parametrize("fmt", ["csv", "text"])
    def test_other_formats(self, fmt):
        assert "98.43" in report_table([report(0.9843)], ["m"], fmt)
