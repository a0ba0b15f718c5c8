"""Per-document and corpus-level reconstruction metrics.

All three metrics are set arithmetic over PII sets: C from the original
text, C~ from the sanitized text, C^ from the reconstruction. A document
counts as successfully attacked when the reconstruction recovers at least
one PII sequence that the sanitizer had removed. Recall and precision are
undefined when their denominator set is empty; undefined values are
excluded from corpus means and the number of defined documents is reported
next to every mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import MetricsError
from .pii import PiiClass

UNDEFINED_POLICY = "undefined ratios excluded from means; n_defined reported"


@dataclass
class DocMetrics:
    succ: int
    recall: float | None
    precision: float | None
    counts: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "succ": self.succ,
            "recall": self.recall,
            "precision": self.precision,
            "counts": dict(self.counts),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DocMetrics":
        return cls(
            succ=int(data["succ"]),
            recall=data.get("recall"),
            precision=data.get("precision"),
            counts=dict(data.get("counts", {})),
        )


def compute_doc_metrics(original_set, sanitized_set, reconstructed_set) -> DocMetrics:
    """Succ / recall / precision for one document.

    recall    = |(C & C^) - C~| / |C - C~|
    precision = |(C & C^) - C~| / |C^ - C~|
    succ      = 1 iff (C & C^) - C~ is nonempty
    """
    c = frozenset(original_set)
    c_tilde = frozenset(sanitized_set)
    c_hat = frozenset(reconstructed_set)
    numerator = (c & c_hat) - c_tilde
    removed = c - c_tilde
    added = c_hat - c_tilde
    return DocMetrics(
        succ=1 if numerator else 0,
        recall=(len(numerator) / len(removed)) if removed else None,
        precision=(len(numerator) / len(added)) if added else None,
        counts={
            "original": len(c),
            "sanitized": len(c_tilde),
            "reconstructed": len(c_hat),
            "recovered": len(numerator),
            "removed": len(removed),
            "added": len(added),
        },
    )


@dataclass
class ClassMetrics:
    precision: float | None
    recall: float | None
    n_precision: int
    n_recall: int


@dataclass
class CorpusReport:
    """Aggregate over one (model, mechanism, budget) cell."""

    model: str = ""
    mechanism: str = ""
    budget: float | None = None
    n_docs: int = 0
    succ_pct: float = 0.0
    recall_pct: float | None = None
    precision_pct: float | None = None
    score_mean: float | None = None
    n_recall_defined: int = 0
    n_precision_defined: int = 0
    n_score_defined: int = 0
    n_errors: int = 0
    per_class: dict[str, ClassMetrics] = field(default_factory=dict)
    undefined_policy: str = UNDEFINED_POLICY

    def to_dict(self) -> dict:
        out = {
            "model": self.model,
            "mechanism": self.mechanism,
            "budget": self.budget,
            "n_docs": self.n_docs,
            "succ_pct": self.succ_pct,
            "recall_pct": self.recall_pct,
            "precision_pct": self.precision_pct,
            "score_mean": self.score_mean,
            "n_recall_defined": self.n_recall_defined,
            "n_precision_defined": self.n_precision_defined,
            "n_score_defined": self.n_score_defined,
            "n_errors": self.n_errors,
            "undefined_policy": self.undefined_policy,
            "per_class": {
                cls: {
                    "precision_pct": m.precision,
                    "recall_pct": m.recall,
                    "n_precision": m.n_precision,
                    "n_recall": m.n_recall,
                }
                for cls, m in self.per_class.items()
            },
        }
        return out


def _mean(values: list[float]) -> float | None:
    return sum(values) / len(values) if values else None


def aggregate(
    docs: list[DocMetrics],
    scores: list[int | None] | None = None,
    model: str = "",
    mechanism: str = "",
    budget: float | None = None,
    n_errors: int = 0,
) -> CorpusReport:
    """Corpus means in percent over the defined entries."""
    if not docs:
        raise MetricsError("cannot aggregate an empty document list")
    recalls = [d.recall for d in docs if d.recall is not None]
    precisions = [d.precision for d in docs if d.precision is not None]
    defined_scores = [s for s in (scores or []) if s is not None]
    recall_mean = _mean(recalls)
    precision_mean = _mean(precisions)
    return CorpusReport(
        model=model,
        mechanism=mechanism,
        budget=budget,
        n_docs=len(docs),
        succ_pct=100.0 * sum(d.succ for d in docs) / len(docs),
        recall_pct=None if recall_mean is None else 100.0 * recall_mean,
        precision_pct=None if precision_mean is None else 100.0 * precision_mean,
        score_mean=_mean([float(s) for s in defined_scores]),
        n_recall_defined=len(recalls),
        n_precision_defined=len(precisions),
        n_score_defined=len(defined_scores),
        n_errors=n_errors,
    )


def per_class_breakdown(set_triples) -> dict[str, ClassMetrics]:
    """Recall/precision per PII class over (C, C~, C^) triples.

    Each triple is restricted to one class's members and the per-document
    ratios are averaged under the same undefined-exclusion policy. Classes
    with no defined ratio anywhere are omitted.
    """
    per_class_recalls: dict[PiiClass, list[float]] = {}
    per_class_precisions: dict[PiiClass, list[float]] = {}
    for c, c_tilde, c_hat in set_triples:
        classes = {cls for cls, _ in frozenset(c) | frozenset(c_tilde) | frozenset(c_hat)}
        for cls in classes:
            sub = compute_doc_metrics(
                {p for p in c if p[0] == cls},
                {p for p in c_tilde if p[0] == cls},
                {p for p in c_hat if p[0] == cls},
            )
            if sub.recall is not None:
                per_class_recalls.setdefault(cls, []).append(sub.recall)
            if sub.precision is not None:
                per_class_precisions.setdefault(cls, []).append(sub.precision)
    out: dict[str, ClassMetrics] = {}
    for cls in sorted(set(per_class_recalls) | set(per_class_precisions), key=lambda c: c.value):
        recalls = per_class_recalls.get(cls, [])
        precisions = per_class_precisions.get(cls, [])
        out[cls.value] = ClassMetrics(
            precision=None if not precisions else 100.0 * _mean(precisions),
            recall=None if not recalls else 100.0 * _mean(recalls),
            n_precision=len(precisions),
            n_recall=len(recalls),
        )
    return out
