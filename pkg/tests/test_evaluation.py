import math

import numpy as np
import pytest
from sklearn.base import clone

from transc import evaluation
from transc.evaluation import (
    EvaluationError, RankResult, ThresholdClassifier, ThresholdTable, best_threshold, classify,
    confusion_metrics, fit_thresholds, link_prediction, rank_triple, summarize_ranks, tie_rank,
    triple_classification,
)
from transc.geometry import EmbeddingSpace
from transc.kg import KnowledgeGraph, Triple, TripleKind, TripleSet, Vocabulary

from oracles import brute_link_prediction, brute_metrics, brute_score, random_kg, random_space, sweep_threshold


# -- ranking ----------------------------------------------------------------------


def test_true_best_is_rank_one():
    assert tie_rank(np.array([0.1, 0.5, 0.9]), 0) == 1


def test_all_ties_give_mean_rank():
    # 5 candidates all tied: expected position of the truth in a random order is 3
    n = 5
    assert tie_rank(np.zeros(n), 2) == 3
    assert tie_rank(np.zeros(n), 2) == sum(range(1, n + 1)) / n


@pytest.mark.parametrize("n_tied", range(0, 7))
def test_tie_rule_matches_ceiling_of_half(n_tied):
    scores = np.array([0.0] + [1.0] * (n_tied + 1) + [2.0])
    assert tie_rank(scores, 1) == 2 + math.ceil(n_tied / 2)


def _four_instance_kg():
    kg = KnowledgeGraph(
        Vocabulary(["a", "b", "c", "d"]), Vocabulary(["x"]), Vocabulary(["r"]),
        {"train": TripleSet(relational=[(0, 0, 1)]), "valid": TripleSet(), "test": TripleSet(relational=[(0, 0, 2)])},
    )
    space = EmbeddingSpace(
        np.array([[0.0, 0.0], [0.1, 0.0], [0.15, 0.0], [0.9, 0.0]]),
        np.array([[0.1, 0.0]]), np.zeros((1, 2)), np.full(1, 0.1), np.zeros((2, 2)),
    )
    return kg, space


def test_filter_removes_known_better_candidate():
    kg, space = _four_instance_kg()
    res = rank_triple(space, kg, Triple.relational(0, 0, 2), "tail")
    # tail candidate b forms the training triple and scores 0 (better than truth)
    assert res.raw_rank == 2
    assert res.filter_rank == res.raw_rank - 1


def test_rank_position_validated():
    kg, space = _four_instance_kg()
    with pytest.raises(ValueError):
        rank_triple(space, kg, Triple.relational(0, 0, 2), "middle")


def test_summary_arithmetic():
    t = Triple.relational(0, 0, 1)
    rep = summarize_ranks([RankResult(t, "head", 1, 1), RankResult(t, "tail", 4, 4)])
    assert rep.mrr_filter == pytest.approx(0.625)
    assert rep.hits_filter[3] == 50.0 and rep.hits_filter[10] == 100.0


def test_single_triple_ranked_first():
    t = Triple.relational(0, 0, 1)
    rep = summarize_ranks([RankResult(t, "head", 1, 1), RankResult(t, "tail", 1, 1)])
    assert rep.mrr_raw == 1.0 and all(v == 100.0 for v in rep.hits_filter.values())


def test_empty_test_split_errors(toy_kg):
    kg = toy_kg.with_splits({**toy_kg.splits, "test": TripleSet()})
    space = random_space(np.random.default_rng(0), kg)
    with pytest.raises(EvaluationError):
        link_prediction(space, kg)


@pytest.mark.parametrize("seed", range(3))
def test_link_prediction_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    kg = random_kg(rng)
    space = random_space(rng, kg, quantize=seed == 2)
    got = link_prediction(space, kg, threads=2 if seed == 1 else 1)
    want = brute_link_prediction(space, kg)
    assert got.mrr_raw == pytest.approx(want["mrr_raw"], abs=1e-12)
    assert got.mrr_filter == pytest.approx(want["mrr_filter"], abs=1e-12)
    for n in (1, 3, 10):
        assert got.hits_filter[n] == pytest.approx(want["hits_filter"][n], abs=1e-9)
        assert got.hits_raw[n] == pytest.approx(want["hits_raw"][n], abs=1e-9)


def test_rank_csv(tmp_path, toy_kg):
    space = random_space(np.random.default_rng(0), toy_kg)
    path = tmp_path / "ranks.csv"
    evaluation.write_rank_csv(path, evaluation.rank_all(space, toy_kg), toy_kg)
    lines = path.read_text().splitlines()
    assert lines[0] == "head,relation,tail,position,raw_rank,filter_rank"
    assert lines[1].startswith("fido,livesWith,rex,head,")


# -- thresholds -------------------------------------------------------------------


def test_separable_midpoint():
    delta, acc = best_threshold([0.1, 0.2, 0.3, 0.4], [1, 1, 0, 0])
    assert delta == pytest.approx(0.25) and acc == 1.0


def test_inseparable_tie_rule():
    delta, acc = best_threshold([0.4, 0.2], [1, 0])
    assert acc == 0.5
    # smallest optimal cut: nothing predicted positive
    assert delta == 0.2 and not (np.array([0.4, 0.2]) < delta).any()


def test_all_positive_cut_above_max():
    delta, acc = best_threshold([0.1, 0.2], [1, 1])
    assert acc == 1.0 and delta > 0.2


def test_threshold_matches_sweep(rng):
    for _ in range(50):
        n = int(rng.integers(1, 30))
        scores = np.round(rng.normal(size=n), 1)
        labels = rng.random(n) < 0.5
        delta, acc = best_threshold(scores, labels)
        want_acc, want_j = sweep_threshold(scores, labels)
        assert acc == pytest.approx(want_acc, abs=1e-12)
        assert len(set(scores[scores < delta].tolist())) == want_j


def test_threshold_input_validation():
    with pytest.raises(ValueError):
        best_threshold([0.1, np.nan], [1, 0])
    with pytest.raises(ValueError):
        best_threshold([0.1], [1, 0])
    with pytest.raises(ValueError):
        best_threshold([], [])


def test_threshold_classifier_groups_and_fallback():
    X = np.array([0.1, 0.3, 1.0, 3.0])
    clf = ThresholdClassifier().fit(X, [1, 0, 1, 0], groups=["a", "a", "b", "b"])
    assert clf.thresholds_ == {"a": pytest.approx(0.2), "b": pytest.approx(2.0)}
    assert clf.predict([0.15, 1.5], groups=["a", "b"]).tolist() == [True, True]
    # unseen group: median of all fitted scores
    assert clf.threshold_for("c") == pytest.approx(np.median(X))
    assert clf.flagged_ == ["c"]
    assert clf.score(X, [1, 0, 1, 0], groups=["a", "a", "b", "b"]) == 1.0
    assert clone(clf).get_params() == {}


def test_threshold_classifier_unfitted():
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        ThresholdClassifier().predict([0.1])


def test_fit_thresholds_flags_missing_relation(toy_kg):
    space = random_space(np.random.default_rng(0), toy_kg)
    table = fit_thresholds(space, toy_kg, "valid")
    # only livesWith has validation triples
    assert table.flagged == ["friendOf"]
    _, scores, _ = evaluation.labeled_scores(
        space, toy_kg, TripleKind.RELATIONAL, "valid", evaluation.split_negatives(toy_kg, "valid")
    )
    assert table.relational[0] == pytest.approx(np.median(scores))


def test_threshold_table_json_roundtrip(tmp_path, toy_kg):
    table = ThresholdTable({0: 0.5, 1: 1.25}, -0.1, 0.3, ["friendOf"])
    path = tmp_path / "t.json"
    table.save(path, toy_kg)
    assert '"livesWith": 1.25' in path.read_text()
    assert ThresholdTable.load(path, toy_kg) == table
    assert ThresholdTable.from_json(table.to_json()) == table


# -- classification -----------------------------------------------------------------


def test_classify_is_strict():
    space = EmbeddingSpace(np.array([[0.0, 0.0], [0.5, 0.0]]), np.zeros((1, 2)), np.zeros((1, 2)),
                           np.array([0.2]), np.zeros((2, 2)))
    t = Triple.relational(0, 0, 1)  # score 0.25
    assert not classify(space, ThresholdTable({0: 0.25}, 0.0, 0.0), t)
    assert classify(space, ThresholdTable({0: 0.25 + 1e-9}, 0.0, 0.0), t)
    assert classify(space, ThresholdTable({}, -0.19, 0.0), Triple.instance_of(0, 0))


def test_hand_counted_confusion():
    predicted = [True, True, False, False, False, False, False, False]
    labels = [True, True, True, True, False, False, False, False]
    m = confusion_metrics(predicted, labels)
    assert (m.tp, m.fp, m.tn, m.fn) == (2, 0, 4, 2)
    assert (m.accuracy, m.precision, m.recall) == (75.0, 100.0, 50.0)
    assert m.f1 == pytest.approx(200 / 3)


def test_degenerate_confusion():
    m = confusion_metrics([False, False], [False, False])
    assert (m.accuracy, m.precision, m.recall, m.f1) == (100.0, 0.0, 0.0, 0.0)


@pytest.mark.parametrize("seed", range(3))
def test_classification_matches_oracle(seed):
    rng = np.random.default_rng(100 + seed)
    kg = random_kg(rng)
    space = random_space(rng, kg)
    table = fit_thresholds(space, kg, "valid", seed=seed)
    got = triple_classification(space, kg, table, "test", seed=seed)
    negatives = evaluation.split_negatives(kg, "test", seed)
    for kind in TripleKind:
        pos = kg.test[kind].tolist()
        neg = negatives.triples[kind].tolist()
        if not pos:
            continue
        predicted = [brute_score(space, kind, row) < table.threshold(Triple.from_row(kind, row)) for row in pos + neg]
        want = brute_metrics(predicted, [True] * len(pos) + [False] * len(neg))
        m = got[kind.value]
        for key, value in want.items():
            assert getattr(m, key) == pytest.approx(value, abs=1e-9)


def test_negatives_are_balanced_and_unknown(small_tree):
    kg = small_tree.kg
    neg = evaluation.split_negatives(kg, "test", seed=0)
    for kind in TripleKind:
        rows = neg.triples[kind]
        assert len(rows) == len(kg.test[kind])
        keys = set(map(tuple, rows.tolist()))
        assert len(keys) == len(rows)
        assert not keys & kg.known_rows(kind)


def test_report_text_and_json(toy_kg):
    space = random_space(np.random.default_rng(0), toy_kg)
    table = fit_thresholds(space, toy_kg)
    report = evaluation.EvalReport(link_prediction(space, toy_kg), triple_classification(space, toy_kg, table),
                                   table.flagged)
    d = report.to_dict()
    assert set(d["hits"]) == {"hits@1", "hits@3", "hits@10"}
    assert d["flagged_thresholds"] == ["friendOf"]
    text = report.to_text()
    assert "Filter" in text and "instanceOf" in text
