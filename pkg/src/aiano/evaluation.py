"""Retrieval quality measures over annotated entries.

A document counts as retrieved when any passage within it was highlighted.
Per-question precision/recall/F1 aggregate by arithmetic mean (macro), and
percent improvements compare two metric triples baseline-relative.
"""

from __future__ import annotations

from dataclasses import dataclass

from .entries import AnnotationEntry
from .errors import EmptyGold, EmptyList, EntryNotFound, ZeroBaseline
from .store import Store


@dataclass
class RetrievalMetrics:
    precision: float
    recall: float
    f1: float

    def to_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1}


def retrieved_documents(entry: AnnotationEntry) -> set[str]:
    """Documents with at least one highlight in the entry, any level."""
    return {h.document_id for h in entry.highlights}


def retrieval_metrics(retrieved: set[str], relevant: set[str]) -> RetrievalMetrics:
    """Set-based precision/recall/F1; empty retrieval scores zero across the board."""
    if not relevant:
        raise EmptyGold("relevant document set must be nonempty")
    tp = len(retrieved & relevant)
    precision = tp / len(retrieved) if retrieved else 0.0
    recall = tp / len(relevant)
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return RetrievalMetrics(precision=precision, recall=recall, f1=f1)


def macro_average(per_question: list[RetrievalMetrics]) -> RetrievalMetrics:
    if not per_question:
        raise EmptyList("cannot average zero questions")
    n = len(per_question)
    return RetrievalMetrics(
        precision=sum(m.precision for m in per_question) / n,
        recall=sum(m.recall for m in per_question) / n,
        f1=sum(m.f1 for m in per_question) / n,
    )


def percent_improvement(candidate: RetrievalMetrics, baseline: RetrievalMetrics) -> dict:
    """Relative change per metric in percent, plus their arithmetic mean."""
    if baseline.precision <= 0 or baseline.recall <= 0 or baseline.f1 <= 0:
        raise ZeroBaseline("baseline metrics must all be positive")
    precision_pct = 100.0 * (candidate.precision - baseline.precision) / baseline.precision
    recall_pct = 100.0 * (candidate.recall - baseline.recall) / baseline.recall
    f1_pct = 100.0 * (candidate.f1 - baseline.f1) / baseline.f1
    return {
        "precision_pct": precision_pct,
        "recall_pct": recall_pct,
        "f1_pct": f1_pct,
        "mean_pct": (precision_pct + recall_pct + f1_pct) / 3.0,
    }


def parse_gold_spec(raw: dict) -> dict[str, set[str]]:
    """Gold file shape: {question_id: [document_id, ...]}, sets nonempty."""
    if not isinstance(raw, dict):
        raise EmptyGold("gold spec must be a JSON object")
    gold: dict[str, set[str]] = {}
    for qid, docs in raw.items():
        if not isinstance(docs, list) or not docs:
            raise EmptyGold(f"gold for question {qid!r} must be a nonempty array")
        gold[str(qid)] = {str(d) for d in docs}
    return gold


def evaluate_project(store: Store, project_id: str, gold: dict[str, set[str]]) -> dict:
    """Per-question and macro metrics for a project, keyed by entry id.

    Each gold question id names the annotation entry holding that question's
    highlights; relevant document ids must exist in the corpus.
    """
    if not gold:
        raise EmptyGold("gold spec is empty")
    documents = store.load_documents(project_id)
    per_question: dict[str, dict] = {}
    metrics: list[RetrievalMetrics] = []
    for qid in sorted(gold):
        relevant = gold[qid]
        missing = sorted(d for d in relevant if d not in documents)
        if missing:
            raise EmptyGold(f"gold for {qid!r} names unknown documents: {', '.join(missing)}",
                            question_id=qid, missing=missing)
        entry = store.get_entry(project_id, qid)
        if entry is None:
            raise EntryNotFound(f"no entry for question {qid!r}", entry_id=qid)
        retrieved = retrieved_documents(entry)
        m = retrieval_metrics(retrieved, relevant)
        metrics.append(m)
        per_question[qid] = {
            **m.to_dict(),
            "retrieved": sorted(retrieved),
            "relevant": sorted(relevant),
        }
    return {"per_question": per_question, "macro": macro_average(metrics).to_dict()}
