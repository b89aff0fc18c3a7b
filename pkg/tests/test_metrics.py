import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from caire.errors import MetricInputError, UndefinedCorrelation
from caire.metrics import (
    MetricReport,
    SpecificSetRecord,
    UniversalSetRecord,
    aggregate_likert,
    aggregate_vel_accuracy,
    binarize,
    evaluate_specific,
    evaluate_universal,
    evaluate_vel,
    gold_ratio,
    multilabel_prf,
    pearson,
    threshold_sweep,
    vel_accuracy,
)


# --- binarize -----------------------------------------------------------------


def test_binarize_headline_setting():
    # threshold 4 keeps scores greater than 3: 4 and 5 are positive
    assert binarize(4, 4) is True
    assert binarize(5, 4) is True
    assert binarize(3, 4) is False


def test_binarize_boundary_inclusive():
    assert binarize(2, 2) is True
    assert binarize(1, 2) is False


def test_binarize_range_checks():
    with pytest.raises(MetricInputError):
        binarize(0, 4)
    with pytest.raises(MetricInputError):
        binarize(6, 3)
    with pytest.raises(MetricInputError):
        binarize(3, 1)
    with pytest.raises(MetricInputError):
        binarize(3, 6)


# --- multilabel prf -----------------------------------------------------------


def test_prf_hand_count():
    preds = {("q", "A"): True, ("q", "B"): False}
    golds = {("q", "A"): True, ("q", "B"): True}
    res = multilabel_prf(preds, golds)
    assert res.precision == 1.0
    assert res.recall == 0.5
    assert res.f1 == pytest.approx(2 / 3)


def test_prf_perfect_predictor():
    keys = [(f"q{i}", label) for i in range(4) for label in "ABC"]
    golds = {k: (hash(k) % 2 == 0) for k in keys}
    res = multilabel_prf(golds, golds)
    assert res.as_tuple() == (1.0, 1.0, 1.0)


def test_prf_no_positive_predictions_flagged():
    preds = {("q", "A"): False, ("q", "B"): False}
    golds = {("q", "A"): True, ("q", "B"): False}
    res = multilabel_prf(preds, golds)
    assert res.as_tuple() == (0.0, 0.0, 0.0)
    assert "no_positive_predictions" in res.zero_division_flags


def test_prf_key_mismatch():
    with pytest.raises(MetricInputError):
        multilabel_prf({("q", "A"): True}, {("q", "B"): True})


def test_prf_matches_confusion_oracle_on_random_fixtures():
    rng = np.random.default_rng(0)
    for trial in range(200):
        n_queries = int(rng.integers(1, 8))
        labels = [f"L{j}" for j in range(int(rng.integers(1, 6)))]
        keys = [(f"q{i}", label) for i in range(n_queries) for label in labels]
        preds = {k: bool(rng.integers(0, 2)) for k in keys}
        golds = {k: bool(rng.integers(0, 2)) for k in keys}
        res = multilabel_prf(preds, golds)

        p_arr = np.array([preds[k] for k in keys])
        g_arr = np.array([golds[k] for k in keys])
        tp = int(np.sum(p_arr & g_arr))
        fp = int(np.sum(p_arr & ~g_arr))
        fn = int(np.sum(~p_arr & g_arr))
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        assert res.true_positives == tp
        assert res.precision == pytest.approx(precision, abs=1e-12)
        assert res.recall == pytest.approx(recall, abs=1e-12)
        assert res.f1 == pytest.approx(f1, abs=1e-12)


def test_macro_average_small_case():
    preds = {("q1", "A"): True, ("q1", "B"): False, ("q2", "A"): True, ("q2", "B"): True}
    golds = {("q1", "A"): True, ("q1", "B"): True, ("q2", "A"): False, ("q2", "B"): True}
    res = multilabel_prf(preds, golds, average="macro")
    # label A: tp=1 fp=1 fn=0 -> P=.5 R=1 F1=2/3 ; label B: tp=1 fp=0 fn=1 -> P=1 R=.5 F1=2/3
    assert res.precision == pytest.approx(0.75)
    assert res.recall == pytest.approx(0.75)
    assert res.f1 == pytest.approx(2 / 3)


# --- threshold sweep -----------------------------------------------------------


def test_sweep_constant_scores_identical_rows():
    scores = {("q", "A"): 5, ("q", "B"): 5, ("r", "A"): 5, ("r", "B"): 5}
    golds = {k: k[1] == "A" for k in scores}
    rows = threshold_sweep(scores, golds)
    assert len({(r.precision, r.recall, r.f1) for r in rows}) == 1


def test_sweep_hand_computed():
    scores = {("q", "A"): 5, ("q", "B"): 4, ("q", "C"): 3, ("q", "D"): 2}
    golds = {("q", "A"): True, ("q", "B"): True, ("q", "C"): False, ("q", "D"): False}
    rows = {r.threshold: r for r in threshold_sweep(scores, golds)}
    # t=2: pos {A,B,C,D}: tp2 fp2 -> P=.5 R=1 F1=2/3
    assert rows[2].precision == pytest.approx(0.5)
    assert rows[2].recall == 1.0
    assert rows[2].f1 == pytest.approx(2 / 3)
    # t=3: pos {A,B,C}: tp2 fp1 -> P=2/3 R=1 F1=0.8
    assert rows[3].precision == pytest.approx(2 / 3)
    assert rows[3].f1 == pytest.approx(0.8)
    # t=4: pos {A,B}: perfect
    assert (rows[4].precision, rows[4].recall, rows[4].f1) == (1.0, 1.0, 1.0)
    # t=5: pos {A}: tp1 fn1 -> P=1 R=.5 F1=2/3
    assert rows[5].recall == pytest.approx(0.5)
    assert [r.positive_predictions for r in threshold_sweep(scores, golds)] == [4, 3, 2, 1]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000))
def test_sweep_recall_monotone_and_positives_non_increasing(seed):
    rng = np.random.default_rng(seed)
    keys = [(f"q{i}", f"L{j}") for i in range(4) for j in range(3)]
    scores = {k: int(rng.integers(1, 6)) for k in keys}
    golds = {k: bool(rng.integers(0, 2)) for k in keys}
    rows = threshold_sweep(scores, golds)
    for earlier, later in zip(rows, rows[1:]):
        assert earlier.recall >= later.recall
        assert earlier.positive_predictions >= later.positive_predictions


def test_sweep_threshold4_equals_binarize_path():
    rng = np.random.default_rng(5)
    keys = [(f"q{i}", f"L{j}") for i in range(10) for j in range(4)]
    scores = {k: int(rng.integers(1, 6)) for k in keys}
    golds = {k: bool(rng.integers(0, 2)) for k in keys}
    row = {r.threshold: r for r in threshold_sweep(scores, golds)}[4]
    direct = multilabel_prf({k: binarize(s, 4) for k, s in scores.items()}, golds)
    assert (row.precision, row.recall, row.f1) == direct.as_tuple()


# --- pearson -------------------------------------------------------------------


def test_pearson_affine_and_sign():
    x = [1.0, 2.0, 3.0, 4.0, 5.0]
    assert pearson(x, [2 * v + 1 for v in x]) == pytest.approx(1.0, abs=1e-12)
    assert pearson(x, [-v for v in x]) == pytest.approx(-1.0, abs=1e-12)


def test_pearson_hand_computed_four_points():
    assert pearson([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-12)


def test_pearson_symmetry_and_affine_invariance():
    rng = np.random.default_rng(2)
    x = list(rng.normal(size=20))
    y = list(rng.normal(size=20))
    assert pearson(x, y) == pytest.approx(pearson(y, x), abs=1e-12)
    assert pearson([3 * v - 7 for v in x], y) == pytest.approx(pearson(x, y), abs=1e-12)


def test_pearson_matches_scipy_oracle():
    rng = np.random.default_rng(3)
    for _ in range(50):
        n = int(rng.integers(3, 40))
        x = rng.normal(size=n)
        y = rng.normal(size=n) + 0.3 * x
        expected = stats.pearsonr(x, y).statistic
        assert pearson(list(x), list(y)) == pytest.approx(expected, abs=1e-12)


def test_pearson_errors():
    with pytest.raises(UndefinedCorrelation):
        pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
    with pytest.raises(MetricInputError):
        pearson([1.0, 2.0], [1.0, 2.0])
    with pytest.raises(MetricInputError):
        pearson([1.0, 2.0, 3.0], [1.0, 2.0])


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 100_000))
def test_pearson_bounded(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 30))
    x = rng.normal(size=n)
    y = rng.normal(size=n)
    if np.var(x) == 0 or np.var(y) == 0:
        return
    assert abs(pearson(list(x), list(y))) <= 1.0 + 1e-12


# --- likert aggregation --------------------------------------------------------


def test_likert_mean():
    agg = aggregate_likert([("a1", "Chile", 3), ("a2", "Chile", 4), ("a3", "Chile", 5)])
    assert agg.means["Chile"] == pytest.approx(4.0)
    assert agg.annotator_counts["Chile"] == 3


def test_likert_single_annotator():
    agg = aggregate_likert([("solo", "Kenya", 2)])
    assert agg.means["Kenya"] == 2.0


def test_likert_disjoint_countries_independent():
    agg = aggregate_likert(
        [("a", "X", 1), ("b", "X", 2), ("c", "Y", 5), ("d", "Y", 4), ("e", "Y", 3)]
    )
    assert agg.means["X"] == pytest.approx(1.5)
    assert agg.means["Y"] == pytest.approx(4.0)
    assert agg.annotator_counts == {"X": 2, "Y": 3}


def test_likert_errors():
    with pytest.raises(MetricInputError):
        aggregate_likert([])
    with pytest.raises(MetricInputError):
        aggregate_likert([("a", "X", 6)])


# --- vel accuracy ---------------------------------------------------------------


def test_vel_accuracy_rank1_hits_everywhere():
    hits = vel_accuracy(["gold", "b", "c"], "gold")
    assert all(hits.values())


def test_vel_accuracy_rank7():
    ranked = [f"e{i}" for i in range(20)]
    hits = vel_accuracy(ranked, "e6")  # rank 7
    assert hits == {1: False, 5: False, 10: True, 20: True}


def test_vel_accuracy_monotone_in_k():
    ranked = [f"e{i}" for i in range(30)]
    for gold in ("e0", "e4", "e12", "e29", "absent"):
        hits = vel_accuracy(ranked, gold, ks=(1, 2, 5, 10, 20, 30))
        values = [hits[k] for k in (1, 2, 5, 10, 20, 30)]
        assert values == sorted(values)


def test_vel_accuracy_input_validation():
    with pytest.raises(MetricInputError):
        vel_accuracy([], "x")
    with pytest.raises(MetricInputError):
        vel_accuracy(["a", "a"], "a")


def test_vel_aggregate_matches_counting_oracle():
    rng = np.random.default_rng(4)
    items = []
    planted_ranks = []
    for _ in range(100):
        rank = int(rng.integers(1, 30))  # gold at this 1-based rank
        planted_ranks.append(rank)
        ranked = [f"other_{i}" for i in range(30)]
        ranked[rank - 1] = "gold"
        items.append((ranked, "gold"))
    rates = aggregate_vel_accuracy(items)
    for k in (1, 5, 10, 20):
        expected = sum(1 for r in planted_ranks if r <= k) / len(planted_ranks)
        assert rates[k] == pytest.approx(expected, abs=1e-12)


# --- gold ratio -----------------------------------------------------------------


def test_gold_ratio_values():
    assert round(gold_ratio(0.689, 0.777), 1) == 88.7
    assert gold_ratio(0.5, 0.5) == 100.0
    assert gold_ratio(0.4885, 0.50) == pytest.approx(97.7, abs=1e-9)
    with pytest.raises(MetricInputError):
        gold_ratio(0.4, 0.0)


# --- end-to-end evaluation helpers ----------------------------------------------


def test_evaluate_specific_small():
    scores = {
        ("q1", "A"): 5, ("q1", "B"): 1,
        ("q2", "A"): 2, ("q2", "B"): 4,
    }
    golds = [
        SpecificSetRecord("q1", "proxy", frozenset({"A"})),
        SpecificSetRecord("q2", "proxy", frozenset({"B"})),
    ]
    report = evaluate_specific(scores, golds)
    assert report.counts == {"queries": 2, "pairs": 4, "gold_positives": 2}
    row4 = {r.threshold: r for r in report.thresholds}[4]
    assert (row4.precision, row4.recall, row4.f1) == (1.0, 1.0, 1.0)


def test_evaluate_specific_missing_gold_and_unscored_label():
    scores = {("q1", "A"): 5}
    with pytest.raises(MetricInputError, match="q1"):
        evaluate_specific(scores, [])
    golds = [SpecificSetRecord("q1", "proxy", frozenset({"A", "B"}))]
    with pytest.raises(MetricInputError, match="never scored"):
        evaluate_specific(scores, golds)


def test_evaluate_universal_affine_predictions_give_r1():
    golds = []
    scores = {}
    rng = np.random.default_rng(6)
    for i in range(8):
        qid = f"u{i}"
        means = {"Chile": float(rng.uniform(1, 5)), "Kenya": float(rng.uniform(1, 5))}
        golds.append(UniversalSetRecord(qid, "breakfast", means))
        for country, mean in means.items():
            # prediction proportional to the human mean (clipped to 1..5 ints
            # would break the affine relation, so use graded 1-5 mapping)
            scores[(qid, country)] = mean
    report = evaluate_universal(scores, golds)  # type: ignore[arg-type]
    assert report.pearson_by_country["Chile"] == pytest.approx(1.0, abs=1e-12)
    assert report.pearson_by_country["Kenya"] == pytest.approx(1.0, abs=1e-12)
    assert report.pearson_average == pytest.approx(1.0, abs=1e-12)
    assert report.pearson_weighted_average == pytest.approx(1.0, abs=1e-12)


def test_evaluate_universal_weighted_vs_unweighted():
    golds = [
        UniversalSetRecord("a", "x", {"P": 1.0, "Q": 1.0}),
        UniversalSetRecord("b", "x", {"P": 2.0, "Q": 3.0}),
        UniversalSetRecord("c", "x", {"P": 3.0, "Q": 2.0}),
        UniversalSetRecord("d", "x", {"P": 4.0}),
        UniversalSetRecord("e", "x", {"P": 5.0}),
    ]
    scores = {
        ("a", "P"): 1, ("b", "P"): 2, ("c", "P"): 3, ("d", "P"): 4, ("e", "P"): 5,
        ("a", "Q"): 1, ("b", "Q"): 2, ("c", "Q"): 3,
    }
    report = evaluate_universal(scores, golds)
    r_p = report.pearson_by_country["P"]  # 1.0 over 5 points
    r_q = report.pearson_by_country["Q"]  # imperfect over 3 points
    assert r_p == pytest.approx(1.0, abs=1e-12)
    expected_unweighted = (r_p + r_q) / 2
    expected_weighted = (5 * r_p + 3 * r_q) / 8
    assert report.pearson_average == pytest.approx(expected_unweighted, abs=1e-12)
    assert report.pearson_weighted_average == pytest.approx(expected_weighted, abs=1e-12)


def test_evaluate_universal_zero_variance_names_country():
    golds = [
        UniversalSetRecord("a", "x", {"P": 2.0}),
        UniversalSetRecord("b", "x", {"P": 3.0}),
        UniversalSetRecord("c", "x", {"P": 4.0}),
    ]
    scores = {("a", "P"): 3, ("b", "P"): 3, ("c", "P"): 3}
    with pytest.raises(UndefinedCorrelation, match="P"):
        evaluate_universal(scores, golds)


def test_evaluate_vel_report():
    items = [(["g", "x"], "g"), (["x", "g"], "g"), (["x", "y"], "g")]
    report = evaluate_vel(items, ks=(1, 2))
    assert report.accuracy_at == {1: pytest.approx(1 / 3), 2: pytest.approx(2 / 3)}
    assert report.counts["queries"] == 3


def test_metric_report_validation():
    with pytest.raises(MetricInputError):
        MetricReport(accuracy_at={1: 1.5})


def test_record_validation():
    with pytest.raises(MetricInputError):
        SpecificSetRecord("q", "proxy", frozenset())
    with pytest.raises(MetricInputError):
        UniversalSetRecord("q", "c", {"X": 7.0})
    with pytest.raises(MetricInputError):
        UniversalSetRecord("q", "c", {"X": 3.0}, split="synthetic")
