import itertools
import random
from functools import lru_cache

import pytest

from docfocus.errors import EmptyEval
from docfocus.metrics import (
    PredictionRecord,
    anls,
    density_eval,
    exact_match,
    levenshtein,
    relaxed_accuracy,
    relaxed_kv_eval,
)
from docfocus.synth import SynthConfig, generate_page, kv_pairs


def rec(pred, gold, wc=10, q="q"):
    return PredictionRecord(
        page_id="p", question=q, prediction=pred,
        gold=tuple(gold) if isinstance(gold, (list, tuple)) else (gold,),
        word_count=wc,
    )


@lru_cache(maxsize=None)
def lev_brute(a: str, b: str) -> int:
    """Textbook recursive definition; independent of the DP implementation."""
    if not a:
        return len(b)
    if not b:
        return len(a)
    return min(
        lev_brute(a[1:], b) + 1,
        lev_brute(a, b[1:]) + 1,
        lev_brute(a[1:], b[1:]) + (a[0] != b[0]),
    )


class TestLevenshtein:
    def test_known_values(self):
        assert levenshtein("", "abc") == 3
        assert levenshtein("kitten", "sitting") == 3
        assert levenshtein("same", "same") == 0

    def test_exhaustive_vs_brute_force(self):
        alphabet = "abc"
        strings = [
            "".join(t)
            for n in range(0, 6)
            for t in itertools.product(alphabet, repeat=n)
        ]
        for a in strings:
            for b in strings:
                assert levenshtein(a, b) == lev_brute(a, b)

    def test_metric_properties(self):
        rng = random.Random(5)
        pool = ["".join(rng.choice("xyz") for _ in range(rng.randint(0, 7))) for _ in range(40)]
        for a, b, c in zip(pool, pool[1:], pool[2:]):
            assert levenshtein(a, b) == levenshtein(b, a)
            assert (levenshtein(a, b) == 0) == (a == b)
            assert levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c)


class TestAnls:
    def test_case_fold_exact(self):
        assert anls([rec("Monday", ["monday"])]) == pytest.approx(1.0)

    def test_one_edit(self):
        assert anls([rec("mondey", ["monday"])]) == pytest.approx(1.0 - 1.0 / 6.0)

    def test_empty_prediction(self):
        assert anls([rec("", ["monday"])]) == pytest.approx(0.0)

    def test_threshold_cutoff(self):
        # nl = 3/6 = 0.5 is not < 0.5, so the score drops to zero
        assert anls([rec("monxyz", ["monday"])]) == pytest.approx(0.0)

    def test_best_gold_wins(self):
        assert anls([rec("42", ["41", "42"])]) == pytest.approx(1.0)

    def test_monotone_in_edit_distance(self):
        gold = ["aaaaaa"]
        scores = [anls([rec("aaaaaa"[:6 - k] + "z" * k, gold)]) for k in range(4)]
        assert scores == sorted(scores, reverse=True)

    def test_empty_records(self):
        with pytest.raises(EmptyEval):
            anls([])


class TestRelaxedAccuracy:
    def test_within_tolerance(self):
        assert relaxed_accuracy([rec("10.2", ["10.0"])]) == pytest.approx(1.0)

    def test_outside_tolerance(self):
        assert relaxed_accuracy([rec("10.6", ["10.0"])]) == pytest.approx(0.0)

    def test_string_branch(self):
        assert relaxed_accuracy([rec("ten", ["ten"])]) == pytest.approx(1.0)

    def test_zero_gold_requires_zero(self):
        assert relaxed_accuracy([rec("0.0", ["0"])]) == pytest.approx(1.0)
        assert relaxed_accuracy([rec("0.01", ["0"])]) == pytest.approx(0.0)

    def test_unparseable_prediction_scores_zero(self):
        assert relaxed_accuracy([rec("dunno", ["10"])]) == pytest.approx(0.0)


class TestExactMatch:
    def test_trim(self):
        assert exact_match([rec("42 ", ["42"])]) == pytest.approx(1.0)

    def test_punctuation_differs(self):
        assert exact_match([rec("42.", ["42"])]) == pytest.approx(0.0)

    def test_any_gold(self):
        assert exact_match([rec("b", ["a", "b"])]) == pytest.approx(1.0)


class TestAllMetricsAgreeOnExact:
    def test_pred_equals_gold_scores_one(self):
        records = [rec("answer", ["answer"]), rec("7", ["7"])]
        assert anls(records) == pytest.approx(1.0)
        assert relaxed_accuracy(records) == pytest.approx(1.0)
        assert exact_match(records) == pytest.approx(1.0)


class TestDensityEval:
    def test_group_membership(self):
        records = [rec("a", ["a"], wc=25), rec("b", ["x"], wc=55), rec("c", ["c"], wc=90)]
        report = density_eval(records, [20, 40, 60], metric="em")
        assert report.n == 3
        assert report.groups[20][1] == 3
        assert report.groups[40][1] == 2
        assert report.groups[60][1] == 1
        assert report.groups[60][0] == pytest.approx(1.0)

    def test_single_group_equals_overall(self):
        records = [rec("a", ["a"], wc=30), rec("b", ["b"], wc=40)]
        report = density_eval(records, [10], metric="em")
        assert report.groups[10][0] == pytest.approx(report.score)

    def test_empty_group_absent(self):
        records = [rec("a", ["a"], wc=30)]
        report = density_eval(records, [10, 100], metric="em")
        assert 100 not in report.groups

    def test_table_rendering(self):
        records = [rec("a", ["a"], wc=30)]
        table = density_eval(records, [10], metric="em").as_table()
        assert ">=10" in table and "em" in table


class TestRelaxedKv:
    def test_perfect_extractor(self):
        page = generate_page(SynthConfig(words=20, kv_rows=3), seed=2)
        truth = {f"what is the value of {k}?": v for k, v, _ in kv_pairs(page)}
        report = relaxed_kv_eval([page], lambda p, q: truth[q])
        assert report.n == 3
        assert report.score == pytest.approx(1.0)

    def test_no_keys_empty_report(self):
        page = generate_page(SynthConfig(words=10, kv_rows=0), seed=2)
        report = relaxed_kv_eval([page], lambda p, q: "x")
        assert report.n == 0 and report.score == 0.0
