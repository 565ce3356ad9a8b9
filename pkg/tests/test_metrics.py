import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from batlab.errors import UsageError
from batlab.metrics import (
    MetricsReport,
    accuracy,
    ae_report,
    asc_report,
    decode_bio,
    encode_bio,
    macro_f1,
    per_class_prf,
    span_f1,
)
from oracles import (
    brute_force_macro_f1,
    brute_force_span_counts,
    brute_force_spans,
    f1_from_counts,
)


class TestDecodeBio:
    @pytest.mark.parametrize(
        "tags,spans",
        [
            ("OBIO", {(1, 2)}),
            ("BB", {(0, 0), (1, 1)}),
            ("OII", {(1, 2)}),
            ("OOO", set()),
            ("BIIOBI", {(0, 2), (4, 5)}),
            ("IOI", {(0, 0), (2, 2)}),
        ],
    )
    def test_examples(self, tags, spans):
        assert decode_bio(list(tags)) == spans

    def test_integer_labels(self):
        assert decode_bio([0, 1, 2, 0]) == {(1, 2)}
        assert decode_bio(np.array([0, 1, 2, 0])) == {(1, 2)}

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.sampled_from("OBI"), max_size=20))
    def test_matches_brute_force(self, tags):
        assert decode_bio(tags) == brute_force_spans(tags)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.sampled_from("OBI"), max_size=20))
    def test_round_trip_on_canonical_sequences(self, tags):
        canonical = [("B" if t == "I" and (i == 0 or tags[i - 1] == "O") else t) for i, t in enumerate(tags)]
        assert encode_bio(decode_bio(canonical), len(canonical)) == canonical


class TestSpanF1:
    def test_exact_match(self):
        assert span_f1([{(1, 2)}], [{(1, 2)}]) == (1.0, 1.0, 1.0)

    def test_partial_overlap_is_wrong(self):
        assert span_f1([{(1, 1)}], [{(1, 2)}])[2] == 0.0

    def test_empty_corpus(self):
        assert span_f1([set(), set()], [set(), set()]) == (1.0, 1.0, 1.0)

    def test_predictions_without_gold(self):
        assert span_f1([{(0, 0)}], [set()]) == (0.0, 0.0, 0.0)

    def test_length_mismatch(self):
        with pytest.raises(UsageError):
            span_f1([set()], [set(), set()])

    def test_duplicates_count_once(self):
        assert span_f1([[(0, 0), (0, 0)]], [{(0, 0)}]) == (1.0, 1.0, 1.0)

    def test_random_corpora_match_counting(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            n = int(rng.integers(1, 8))
            pred_tags = [list(rng.choice(list("OBI"), size=int(rng.integers(0, 10)))) for _ in range(n)]
            gold_tags = [list(rng.choice(list("OOBI"), size=len(t))) for t in pred_tags]
            pred = [brute_force_spans(t) for t in pred_tags]
            gold = [brute_force_spans(t) for t in gold_tags]
            expected = f1_from_counts(*brute_force_span_counts(pred, gold))
            assert span_f1([decode_bio(t) for t in pred_tags], [decode_bio(t) for t in gold_tags]) == expected

    def test_swap_exchanges_precision_and_recall(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            a = [decode_bio(list(rng.choice(list("OBI"), size=8))) for _ in range(4)]
            b = [decode_bio(list(rng.choice(list("OBI"), size=8))) for _ in range(4)]
            p, r, f = span_f1(a, b)
            assert span_f1(b, a) == pytest.approx((r, p, f), abs=1e-15)


class TestAccuracy:
    def test_identical(self):
        assert accuracy([0, 1, 2], [0, 1, 2]) == 1.0

    def test_disjoint(self):
        assert accuracy([0, 0], [1, 2]) == 0.0

    def test_empty(self):
        with pytest.raises(UsageError):
            accuracy([], [])

    def test_random_matches_count(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            n = int(rng.integers(1, 1000))
            p, g = rng.integers(0, 3, n).tolist(), rng.integers(0, 3, n).tolist()
            hits = 0
            for i in range(n):
                hits += p[i] == g[i]
            assert accuracy(p, g) == hits / n


class TestMacroF1:
    def test_perfect(self):
        assert macro_f1([0, 1, 2], [0, 1, 2]) == 1.0

    def test_absent_classes_excluded(self):
        assert macro_f1([1, 1, 1], [1, 1, 1]) == 1.0

    def test_gold_class_never_predicted_scores_zero(self):
        assert macro_f1([0, 0], [0, 1]) == pytest.approx((2 / 3 + 0.0) / 2)

    def test_empty(self):
        with pytest.raises(UsageError):
            macro_f1([], [])

    def test_out_of_range_label(self):
        with pytest.raises(ValueError):
            macro_f1([3], [0])

    def test_random_matches_tabulation(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            n = int(rng.integers(1, 500))
            k = int(rng.integers(1, 4))
            p, g = rng.integers(0, k, n).tolist(), rng.integers(0, k, n).tolist()
            assert macro_f1(p, g) == brute_force_macro_f1(p, g)

    def test_per_class_support(self):
        table = per_class_prf([0, 1, 1, 2], [0, 1, 2, 2])
        assert [table[c]["support"] for c in range(3)] == [1, 1, 2]


class TestReports:
    def test_rates_in_unit_interval(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            tags = [list(rng.choice(list("OBI"), size=6)) for _ in range(5)]
            gold = [list(rng.choice(list("OBI"), size=6)) for _ in range(5)]
            rep = ae_report(tags, gold)
            assert all(0.0 <= v <= 1.0 for v in rep.values().values())
            p, g = rng.integers(0, 3, 20).tolist(), rng.integers(0, 3, 20).tolist()
            rep = asc_report(p, g)
            assert all(0.0 <= v <= 1.0 for v in rep.values().values())
            assert rep.support == 20
            assert sum(row["support"] for row in rep.per_class.values()) == 20

    def test_csv_row_column_order(self):
        rep = asc_report([0, 1], [0, 0], split="test", seed=3, config="x")
        assert rep.csv_row() == "asc,test,3,x,,,,0.5,0.3333333333333333,2\n"

    def test_text_block(self):
        text = ae_report([["B", "O"]], [["B", "O"]], seed=1).text()
        assert "f1" in text and "1.0000" in text

    def test_primary(self):
        assert MetricsReport("ae", f1=0.5).primary == 0.5
        assert MetricsReport("asc", accuracy=0.25).primary == 0.25
