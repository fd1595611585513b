import pytest

from fakestack.core import ClassProbabilities, Label, PredictionRecord, records_from_array


def test_label_indices_and_parse():
    assert int(Label.FAKE) == 0 and int(Label.REAL) == 1
    assert Label.parse(" Fake ") is Label.FAKE
    assert Label.parse("REAL") is Label.REAL
    assert str(Label.REAL) == "real"
    with pytest.raises(ValueError):
        Label.parse("true")


def test_probabilities_must_sum_to_one():
    with pytest.raises(ValueError):
        ClassProbabilities(0.4, 0.5)
    ClassProbabilities(0.3, 0.7 + 5e-7)


def test_tie_goes_to_fake():
    assert ClassProbabilities(0.5, 0.5).predicted is Label.FAKE
    assert ClassProbabilities(0.49, 0.51).predicted is Label.REAL


def test_records_from_array_keeps_order():
    recs = records_from_array(["a", "b"], "m", [[0.9, 0.1], [0.2, 0.8]])
    assert [r.post_id for r in recs] == ["a", "b"]
    assert [r.predicted for r in recs] == [Label.FAKE, Label.REAL]
    assert recs[0] == PredictionRecord.from_probs("a", "m", 0.9, 0.1)
