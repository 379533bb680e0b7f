import itertools
import json
import random

import pytest

from aiano import evaluation
from aiano.errors import EmptyGold, EmptyList, ZeroBaseline
from aiano.evaluation import (
    RetrievalMetrics,
    macro_average,
    percent_improvement,
    retrieval_metrics,
    retrieved_documents,
)
from aiano.store import Store

from conftest import make_entry, make_highlight


def test_retrieved_documents_dedupes():
    entry = make_entry("p", highlights=[
        make_highlight("d1", 0, 3, "Ber", hid="h1"),
        make_highlight("d1", 4, 7, "lin", hid="h2"),
        make_highlight("d3", 0, 2, "Mü", hid="h3"),
    ])
    assert retrieved_documents(entry) == {"d1", "d3"}


def test_no_highlights_no_retrieval():
    assert retrieved_documents(make_entry("p")) == set()


def test_retrieved_matches_scan_oracle():
    rng = random.Random(5)
    for _ in range(50):
        docs = [f"d{i}" for i in range(8)]
        hs = [make_highlight(rng.choice(docs), 0, 1, "x", hid=f"h{i}")
              for i in range(rng.randint(0, 12))]
        entry = make_entry("p", highlights=hs)
        expected = set()
        for h in hs:  # brute-force scan
            expected.add(h.document_id)
        assert retrieved_documents(entry) == expected


def test_metrics_two_thirds_case():
    m = retrieval_metrics({"d1", "d2", "d4"}, {"d1", "d2", "d3"})
    assert m.precision == pytest.approx(2 / 3)
    assert m.recall == pytest.approx(2 / 3)
    assert m.f1 == pytest.approx(2 / 3)


def test_perfect_retrieval():
    m = retrieval_metrics({"a", "b"}, {"a", "b"})
    assert (m.precision, m.recall, m.f1) == (1.0, 1.0, 1.0)


def test_empty_retrieval_scores_zero():
    m = retrieval_metrics(set(), {"a"})
    assert (m.precision, m.recall, m.f1) == (0.0, 0.0, 0.0)


def test_empty_gold_rejected():
    with pytest.raises(EmptyGold):
        retrieval_metrics({"a"}, set())


def confusion_matrix_oracle(retrieved, relevant, universe):
    """Brute force over the universe: count tp/fp/fn per document."""
    tp = fp = fn = 0
    for doc in universe:
        if doc in retrieved and doc in relevant:
            tp += 1
        elif doc in retrieved:
            fp += 1
        elif doc in relevant:
            fn += 1
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def test_metrics_match_confusion_oracle_4doc_universe():
    universe = ["d0", "d1", "d2", "d3"]
    subsets = [set(c) for n in range(5) for c in itertools.combinations(universe, n)]
    for retrieved in subsets:
        for relevant in subsets:
            if not relevant:
                continue
            m = retrieval_metrics(retrieved, relevant)
            assert (m.precision, m.recall, m.f1) == confusion_matrix_oracle(
                retrieved, relevant, universe)


def test_f1_harmonic_bound_property():
    rng = random.Random(11)
    for _ in range(500):
        universe = [f"d{i}" for i in range(10)]
        retrieved = {d for d in universe if rng.random() < 0.5}
        relevant = {d for d in universe if rng.random() < 0.5} or {"d0"}
        m = retrieval_metrics(retrieved, relevant)
        assert 0.0 <= m.precision <= 1.0
        assert 0.0 <= m.recall <= 1.0
        assert 0.0 <= m.f1 <= 1.0
        if m.precision > 0 and m.recall > 0:
            low = min(m.precision, m.recall)
            assert low - 1e-12 <= m.f1 <= 2 * low + 1e-12


def test_macro_average_singleton_and_symmetric():
    one = macro_average([RetrievalMetrics(1, 1, 1)])
    assert (one.precision, one.recall, one.f1) == (1.0, 1.0, 1.0)
    sym = macro_average([RetrievalMetrics(1, 0, 0), RetrievalMetrics(0, 1, 0)])
    assert (sym.precision, sym.recall, sym.f1) == (0.5, 0.5, 0.0)


def test_macro_average_matches_mean_oracle():
    rng = random.Random(23)
    ms = [RetrievalMetrics(rng.random(), rng.random(), rng.random()) for _ in range(9)]
    got = macro_average(ms)
    assert got.precision == pytest.approx(sum(m.precision for m in ms) / 9, abs=1e-12)
    assert got.recall == pytest.approx(sum(m.recall for m in ms) / 9, abs=1e-12)
    assert got.f1 == pytest.approx(sum(m.f1 for m in ms) / 9, abs=1e-12)
    with pytest.raises(EmptyList):
        macro_average([])


def test_percent_improvement_study_figures():
    out = percent_improvement(RetrievalMetrics(0.889, 0.883, 0.860),
                              RetrievalMetrics(0.867, 0.783, 0.787))
    assert out["precision_pct"] == pytest.approx(2.5374855825, abs=1e-6)
    assert out["recall_pct"] == pytest.approx(12.7713920817, abs=1e-6)
    assert out["f1_pct"] == pytest.approx(9.2757306226, abs=1e-6)
    assert out["mean_pct"] == pytest.approx(8.1948694289, abs=1e-6)


def test_percent_improvement_identity_and_guard():
    same = RetrievalMetrics(0.5, 0.5, 0.5)
    out = percent_improvement(same, same)
    assert out == {"precision_pct": 0.0, "recall_pct": 0.0, "f1_pct": 0.0, "mean_pct": 0.0}
    with pytest.raises(ZeroBaseline):
        percent_improvement(same, RetrievalMetrics(0.5, 0.0, 0.5))


# --- project-level evaluation ---

def test_evaluate_project_end_to_end(store, corpus_project):
    pid = corpus_project.project_id
    e1 = make_entry(pid, entry_id="q1", highlights=[
        make_highlight("d1", 0, 6, "Berlin", hid="h1"),
        make_highlight("d2", 0, 3, "Die", hid="h2"),
    ])
    e2 = make_entry(pid, entry_id="q2", highlights=[
        make_highlight("d4", 0, 5, "Paris", hid="h3"),
    ])
    store.upsert_entry(e1, 0)
    store.upsert_entry(e2, 0)
    gold = {"q1": {"d1", "d3"}, "q2": {"d4"}}
    report = evaluation.evaluate_project(store, pid, gold)
    q1 = report["per_question"]["q1"]
    assert q1["precision"] == pytest.approx(0.5)
    assert q1["recall"] == pytest.approx(0.5)
    assert q1["f1"] == pytest.approx(0.5)
    q2 = report["per_question"]["q2"]
    assert (q2["precision"], q2["recall"], q2["f1"]) == (1.0, 1.0, 1.0)
    assert report["macro"]["precision"] == pytest.approx(0.75)
    assert report["macro"]["f1"] == pytest.approx(0.75)


def test_evaluate_rejects_unknown_documents(store, corpus_project):
    store.upsert_entry(make_entry(corpus_project.project_id, entry_id="q1"), 0)
    with pytest.raises(EmptyGold):
        evaluation.evaluate_project(store, corpus_project.project_id, {"q1": {"ghost"}})


def test_gold_spec_parsing():
    gold = evaluation.parse_gold_spec({"q1": ["d1", "d2"]})
    assert gold == {"q1": {"d1", "d2"}}
    with pytest.raises(EmptyGold):
        evaluation.parse_gold_spec({"q1": []})
    with pytest.raises(EmptyGold):
        evaluation.parse_gold_spec([1, 2])
