import json

import numpy as np
import pytest

from fakestack.core import Label, PredictionRecord
from fakestack.data_ingest import DatasetSplit, LabeledPost
from fakestack.errors import CoverageError
from fakestack.metrics import (
    ConfusionMatrix,
    confusion,
    evaluate,
    markdown_row,
    parse_report,
    per_class,
    render_report,
    weighted,
)


def make(golds, preds, model="m"):
    split = DatasetSplit("test", tuple(LabeledPost(str(i), "t", Label(g)) for i, g in enumerate(golds)))
    recs = [PredictionRecord.from_probs(str(i), model, 1.0 - p, float(p)) for i, p in enumerate(preds)]
    return split, recs


def oracle(golds, preds):
    """Brute-force counting, written independently of the library."""
    n = len(golds)
    out = {"accuracy": sum(g == p for g, p in zip(golds, preds)) / n}
    wp = wr = wf = 0.0
    for c in (0, 1):
        tp = sum(1 for g, p in zip(golds, preds) if g == c and p == c)
        pred_c = sum(1 for p in preds if p == c)
        gold_c = sum(1 for g in golds if g == c)
        prec = tp / pred_c if pred_c else 0.0
        rec = tp / gold_c if gold_c else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        out[c] = (prec, rec, f1)
        wp += gold_c * prec / n
        wr += gold_c * rec / n
        wf += gold_c * f1 / n
    out["weighted"] = (wp, wr, wf)
    return out


GOLDS4 = [0, 0, 1, 1]
PREDS4 = [0, 1, 1, 1]


def test_four_sample_confusion():
    split, recs = make(GOLDS4, PREDS4)
    cm = confusion(recs, split)
    assert cm.counts.tolist() == [[1, 1], [0, 2]]


def test_four_sample_per_class_and_weighted():
    split, recs = make(GOLDS4, PREDS4)
    pc = per_class(confusion(recs, split))
    assert pc[Label.FAKE].precision == 1.0 and pc[Label.FAKE].recall == 0.5
    assert pc[Label.FAKE].f1 == pytest.approx(2 / 3, abs=1e-12)
    assert pc[Label.REAL].precision == pytest.approx(2 / 3, abs=1e-12)
    assert pc[Label.REAL].recall == 1.0 and pc[Label.REAL].f1 == pytest.approx(0.8, abs=1e-12)
    w = weighted(confusion(recs, split))
    assert w.accuracy == 0.75 and w.recall == pytest.approx(0.75, abs=1e-12)


def test_four_sample_markdown_row():
    split, recs = make(GOLDS4, PREDS4)
    assert markdown_row(evaluate(recs, split)) == "0.750 | 0.667 | 0.800 | 1.000 | 0.667 | 0.500 | 1.000"


def test_perfect_report_all_ones():
    split, recs = make([0, 1, 1], [0, 1, 1])
    report = evaluate(recs, split)
    assert report.confusion.counts[0, 1] == report.confusion.counts[1, 0] == 0
    assert markdown_row(report) == " | ".join(["1.000"] * 7)


def test_absent_class_scores_zero_with_flag():
    split, recs = make([1, 1], [1, 1])
    report = evaluate(recs, split)
    assert report.per_class[Label.FAKE] == type(report.per_class[Label.FAKE])(0.0, 0.0, 0.0)
    assert any("fake" in f for f in report.flags)


def test_coverage_errors():
    split, recs = make([0, 1, 1], [0, 1, 1])
    with pytest.raises(CoverageError):
        confusion(recs[:2], split)
    extra = recs + [PredictionRecord.from_probs("zz", "m", 0.5, 0.5)]
    with pytest.raises(CoverageError):
        confusion(extra, split)


def test_empty_matrix_rejected():
    with pytest.raises(ValueError):
        weighted(ConfusionMatrix(np.zeros((2, 2), dtype=np.int64)))


def test_random_instances_match_oracle():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(1, 51))
        golds = rng.integers(0, 2, n).tolist()
        preds = rng.integers(0, 2, n).tolist()
        split, recs = make(golds, preds)
        report = evaluate(recs, split)
        ref = oracle(golds, preds)
        assert abs(report.accuracy - ref["accuracy"]) <= 1e-9
        for c in (0, 1):
            s = report.per_class[Label(c)]
            assert np.allclose((s.precision, s.recall, s.f1), ref[c], atol=1e-9, rtol=0)
        w = report.weighted
        assert np.allclose((w.precision, w.recall, w.f1), ref["weighted"], atol=1e-9, rtol=0)
        assert abs(w.recall - report.accuracy) <= 1e-12


def test_test_split_accuracy_2097_of_2140():
    golds = [1] * 1120 + [0] * 1020
    preds = list(golds)
    for i in range(43):
        preds[i * 40] = 1 - preds[i * 40]
    split, recs = make(golds, preds)
    assert abs(evaluate(recs, split).accuracy - 0.979906542) <= 1e-9


def test_json_round_trip_and_determinism():
    split, recs = make(GOLDS4, PREDS4)
    report = evaluate(recs, split, model="bert")
    text = render_report(report, "json")
    assert text == render_report(evaluate(recs, split, model="bert"), "json")
    doc = json.loads(text)
    assert doc["accuracy"] == 0.75 and doc["model"] == "bert"
    back = parse_report(text)
    assert back.accuracy == report.accuracy and back.confusion.counts.tolist() == [[1, 1], [0, 2]]
    assert "| bert | 0.750 |" in render_report(report, "markdown")
