"""Confusion-matrix metrics and report rendering.

Weighted (support-weighted) averaging is the canonical aggregate, so the
weighted recall always equals accuracy. A metric whose denominator is zero
is reported as 0 and flagged in ``EvaluationReport.flags``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .core import Label, PredictionRecord
from .errors import CoverageError

CLASSES = (Label.FAKE, Label.REAL)


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    # counts[gold, predicted], indexed by Label value
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (2, 2) or (counts < 0).any():
            raise ValueError("confusion counts must be a non-negative 2x2 matrix")
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    @classmethod
    def from_labels(cls, gold: Iterable, predicted: Iterable) -> "ConfusionMatrix":
        counts = np.zeros((2, 2), dtype=np.int64)
        for g, p in zip(gold, predicted):
            counts[int(g), int(p)] += 1
        return cls(counts)


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class WeightedScores:
    accuracy: float
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class EvaluationReport:
    accuracy: float
    per_class: Mapping[Label, ClassScores]
    weighted: WeightedScores
    support: Mapping[Label, int]
    n: int
    confusion: ConfusionMatrix | None = None
    model: str = ""
    split: str = ""
    flags: tuple[str, ...] = field(default=())


def confusion(preds: Iterable[PredictionRecord], golds) -> ConfusionMatrix:
    """Tally ``(gold, predicted)`` pairs; predictions must cover exactly the gold ids."""
    gold_by_id = {p.id: p.label for p in golds}
    pred_by_id = {}
    dup = []
    for rec in preds:
        if rec.post_id in pred_by_id:
            dup.append(rec.post_id)
        pred_by_id[rec.post_id] = rec.predicted
    missing = sorted(set(gold_by_id) - set(pred_by_id))
    extra = sorted(set(pred_by_id) - set(gold_by_id))
    if missing or extra or dup:
        raise CoverageError(
            f"predictions do not cover gold ids: missing={missing[:10]} extra={extra[:10]} duplicated={dup[:10]}",
            missing=missing, extra=extra,
        )
    ids = list(gold_by_id)
    return ConfusionMatrix.from_labels((gold_by_id[i] for i in ids), (pred_by_id[i] for i in ids))


def _ratio(num: float, den: float) -> tuple[float, bool]:
    return (num / den, False) if den else (0.0, True)


def _per_class_with_flags(cm: ConfusionMatrix):
    c = cm.counts
    scores, flags = {}, []
    for cls in CLASSES:
        k = int(cls)
        tp = c[k, k]
        precision, p_bad = _ratio(tp, c[:, k].sum())
        recall, r_bad = _ratio(tp, c[k, :].sum())
        f1, f_bad = _ratio(2 * precision * recall, precision + recall)
        for name, bad in (("precision", p_bad), ("recall", r_bad), ("f1", f_bad)):
            if bad:
                flags.append(f"{name}_undefined:{cls}")
        scores[cls] = ClassScores(float(precision), float(recall), float(f1))
    return scores, flags


def per_class(cm: ConfusionMatrix) -> dict[Label, ClassScores]:
    return _per_class_with_flags(cm)[0]


def weighted(cm: ConfusionMatrix) -> WeightedScores:
    n = cm.total
    if n == 0:
        raise ValueError("cannot compute metrics of an empty confusion matrix")
    scores = per_class(cm)
    support = cm.counts.sum(axis=1)
    w = {cls: support[int(cls)] / n for cls in CLASSES}
    return WeightedScores(
        accuracy=float(np.trace(cm.counts) / n),
        precision=float(sum(w[c] * scores[c].precision for c in CLASSES)),
        recall=float(sum(w[c] * scores[c].recall for c in CLASSES)),
        f1=float(sum(w[c] * scores[c].f1 for c in CLASSES)),
    )


def build_report(cm: ConfusionMatrix, model: str = "", split: str = "") -> EvaluationReport:
    scores, flags = _per_class_with_flags(cm)
    w = weighted(cm)
    support = {cls: int(cm.counts[int(cls)].sum()) for cls in CLASSES}
    return EvaluationReport(w.accuracy, scores, w, support, cm.total, cm, model, split, tuple(flags))


def evaluate(preds, golds, model: str = "", split: str = "") -> EvaluationReport:
    return build_report(confusion(preds, golds), model=model, split=split or getattr(golds, "name", ""))


MARKDOWN_HEADER = (
    "| Model | Accuracy | f1 Fake | f1 Real | Precision Fake | Precision Real | Recall Fake | Recall Real |\n"
    "|---|---|---|---|---|---|---|---|"
)


def markdown_row(report: EvaluationReport) -> str:
    f, r = report.per_class[Label.FAKE], report.per_class[Label.REAL]
    cells = [report.accuracy, f.f1, r.f1, f.precision, r.precision, f.recall, r.recall]
    return " | ".join(f"{v:.3f}" for v in cells)


def _round(v: float) -> float:
    return round(float(v), 9)


def report_to_dict(report: EvaluationReport) -> dict:
    return {
        "model": report.model,
        "split": report.split,
        "n": report.n,
        "accuracy": _round(report.accuracy),
        "weighted": {k: _round(getattr(report.weighted, k)) for k in ("precision", "recall", "f1")},
        "per_class": {
            str(cls): {k: _round(getattr(s, k)) for k in ("precision", "recall", "f1")}
            for cls, s in report.per_class.items()
        },
        "support": {str(cls): n for cls, n in report.support.items()},
        "confusion": None if report.confusion is None else report.confusion.counts.tolist(),
        "flags": list(report.flags),
    }


def render_report(report: EvaluationReport, format: str = "markdown") -> str:
    """Markdown (3 decimals, one row per model) or JSON (9 decimals)."""
    if format == "markdown":
        name = report.model or "model"
        return f"{MARKDOWN_HEADER}\n| {name} | {markdown_row(report)} |\n"
    if format == "json":
        return json.dumps(report_to_dict(report), indent=2, sort_keys=True) + "\n"
    raise ValueError(f"unknown report format {format!r}")


def render_table(reports: Iterable[EvaluationReport]) -> str:
    rows = [f"| {r.model or 'model'} | {markdown_row(r)} |" for r in reports]
    return MARKDOWN_HEADER + "\n" + "\n".join(rows) + "\n"


def parse_report(text: str) -> EvaluationReport:
    doc = json.loads(text)
    per = {Label.parse(k): ClassScores(**v) for k, v in doc["per_class"].items()}
    w = doc["weighted"]
    cm = None if doc.get("confusion") is None else ConfusionMatrix(np.array(doc["confusion"]))
    return EvaluationReport(
        accuracy=doc["accuracy"],
        per_class=per,
        weighted=WeightedScores(doc["accuracy"], w["precision"], w["recall"], w["f1"]),
        support={Label.parse(k): v for k, v in doc["support"].items()},
        n=doc["n"],
        confusion=cm,
        model=doc.get("model", ""),
        split=doc.get("split", ""),
        flags=tuple(doc.get("flags", ())),
    )
