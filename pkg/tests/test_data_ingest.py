import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import write_csv
from fakestack.core import Label
from fakestack.data_ingest import (
    EMPTY_PLACEHOLDER,
    DatasetSplit,
    LabeledPost,
    PreprocessOptions,
    adapt_fakecovid,
    compute_stats,
    kfold_partition,
    load_split,
    load_verdict_mapping,
    merge_splits,
    preprocess_text,
    write_split,
)
from fakestack.errors import IntegrityError, LabelValueError, SchemaError

ALL_OPTS = PreprocessOptions(lowercase=True, strip_urls=True, strip_user_mentions=True, collapse_whitespace=True)


def split_of(labels, name="custom", prefix="p"):
    return DatasetSplit(name, tuple(LabeledPost(f"{prefix}{i}", f"text {i}", Label(l)) for i, l in enumerate(labels)))


# -- loading ----------------------------------------------------------------

def test_load_split_preserves_order_and_quoting(tmp_path):
    path = write_csv(tmp_path / "s.csv", ['1,"Hello, ""world""",real', "2,plain text,Fake"])
    split = load_split(path, name="train")
    assert split.ids == ["1", "2"]
    assert split.posts[0].text == 'Hello, "world"'
    assert list(split.labels) == [1, 0]


def test_load_split_tsv_auto(tmp_path):
    path = tmp_path / "s.tsv"
    path.write_text("id\ttweet\tlabel\n7\ta, b\treal\n", encoding="utf-8")
    assert load_split(path).posts[0].text == "a, b"


def test_header_only_is_empty_split(tmp_path):
    split = load_split(write_csv(tmp_path / "s.csv", []))
    assert len(split) == 0
    assert compute_stats(split).n_total == 0 and compute_stats(split).avg_words == 0


def test_duplicate_id_names_the_id(tmp_path):
    path = write_csv(tmp_path / "s.csv", ["17,a,real", "17,b,fake"])
    with pytest.raises(IntegrityError, match="17"):
        load_split(path)


def test_unknown_label_reports_row(tmp_path):
    path = write_csv(tmp_path / "s.csv", ["1,a,real", "2,b,maybe"])
    with pytest.raises(LabelValueError) as info:
        load_split(path)
    assert info.value.row == 3 and info.value.value == "maybe"


@pytest.mark.parametrize("header", ["id,tweet", "id,tweet,label,extra", "id,text,label"])
def test_schema_errors(tmp_path, header):
    path = write_csv(tmp_path / "s.csv", [], header=header)
    with pytest.raises(SchemaError):
        load_split(path)


def test_write_then_load_round_trip(tmp_path):
    split = split_of([0, 1, 1], name="test")
    write_split(split, tmp_path / "o.csv")
    assert load_split(tmp_path / "o.csv", name="test") == split


def test_stats_counts_and_average():
    split = DatasetSplit("custom", (LabeledPost("a", "one two", Label.REAL), LabeledPost("b", "one two three four", Label.FAKE)))
    assert compute_stats(split).__dict__ == {"n_total": 2, "n_real": 1, "n_fake": 1, "avg_words": 3.0}


# -- FakeCovid ----------------------------------------------------------------

def test_fakecovid_mapping_and_skips(tmp_path):
    path = tmp_path / "fc.csv"
    path.write_text("title,class,lang\nGarlic cures it,False,en\n,true,en\nVaccine approved,TRUE,en\n"
                    "Masks useless,Partially false,en\n", encoding="utf-8")
    split = adapt_fakecovid(path)
    assert split.name == "external"
    assert [p.label for p in split.posts] == [Label.FAKE, Label.REAL, Label.FAKE]
    assert split.metadata["skipped_empty_title"] == 1


def test_fakecovid_unmapped_verdicts_are_listed(tmp_path):
    path = tmp_path / "fc.csv"
    path.write_text("title,class\na,false\nb,Two Pinocchios\nc,satire\n", encoding="utf-8")
    with pytest.raises(LabelValueError) as info:
        adapt_fakecovid(path)
    assert info.value.value == ["satire", "two pinocchios"]


def test_bundled_mapping_core_verdicts():
    mapping = load_verdict_mapping()
    for v in ("false", "partially false", "misleading", "mostly false", "no evidence"):
        assert mapping[v] is Label.FAKE
    for v in ("true", "mostly true", "correct"):
        assert mapping[v] is Label.REAL


# -- preprocessing ------------------------------------------------------------

def test_preprocess_examples():
    opts = PreprocessOptions(lowercase=True, strip_urls=True)
    assert preprocess_text("Check https://x.co NOW", opts) == "check now"
    assert preprocess_text("http://a.b", PreprocessOptions(strip_urls=True)) == EMPTY_PLACEHOLDER
    assert preprocess_text("hi @bob there", PreprocessOptions(strip_user_mentions=True)) == "hi there"
    assert preprocess_text("a  \t b\n", PreprocessOptions(collapse_whitespace=True)) == "a b"


@settings(max_examples=1000, deadline=None)
@given(st.text(alphabet=st.sampled_from(list("aB @:/.w htps\t\nx1")), max_size=40), st.booleans(), st.booleans(),
       st.booleans(), st.booleans())
def test_preprocess_idempotent(text, a, b, c, d):
    opts = PreprocessOptions(a, b, c, d)
    once = preprocess_text(text, opts)
    assert preprocess_text(once, opts) == once


@settings(max_examples=200, deadline=None)
@given(st.text(max_size=40))
def test_identity_options_leave_text_unchanged(text):
    assert preprocess_text(text, PreprocessOptions()) == text


# -- merge ------------------------------------------------------------------

def test_merge_namespaces_collisions():
    a = DatasetSplit("train", (LabeledPost("5", "x", Label.REAL), LabeledPost("6", "y", Label.FAKE)))
    b = DatasetSplit("external", (LabeledPost("5", "z", Label.FAKE), LabeledPost("9", "w", Label.FAKE)))
    merged = merge_splits(a, b)
    assert merged.ids == ["5", "6", "ext:5", "ext:9"]
    assert merged.name == "train"


def test_merge_sizes_add_and_empty_is_identity():
    a = split_of([0, 1] * 10, name="train", prefix="a")
    b = split_of([0] * 7, name="external", prefix="b")
    assert len(merge_splits(a, b)) == 27
    assert merge_splits(a, DatasetSplit("external", ())).posts == a.posts


# -- k-fold -----------------------------------------------------------------

def test_kfold_small_stratified_instance():
    split = split_of([1, 1, 1, 1, 1, 1, 0, 0, 0, 0])
    for _, holdout in kfold_partition(split, 2, seed=3):
        labels = list(holdout.labels)
        assert labels.count(1) == 3 and labels.count(0) == 2


def test_kfold_sizes_for_full_train_shape():
    split = split_of([1] * 3360 + [0] * 3060)
    folds = kfold_partition(split, 5, seed=0)
    assert [len(h) for _, h in folds] == [1284] * 5


def test_kfold_rejects_bad_k():
    split = split_of([0, 1, 0])
    for k in (1, 4):
        with pytest.raises(ValueError):
            kfold_partition(split, k, 0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=2, max_size=60), st.integers(2, 7), st.integers(0, 2**31))
def test_kfold_properties(labels, k, seed):
    split = split_of(labels)
    k = min(k, len(labels))
    folds = kfold_partition(split, k, seed)
    assert folds == kfold_partition(split, k, seed)
    holdout_ids = [i for _, h in folds for i in h.ids]
    assert sorted(holdout_ids) == sorted(split.ids)          # exact cover, no repeats
    sizes = [len(h) for _, h in folds]
    assert max(sizes) - min(sizes) <= 1
    for cls in (0, 1):
        counts = [int((h.labels == cls).sum()) for _, h in folds]
        assert max(counts) - min(counts) <= 1
    order = {pid: i for i, pid in enumerate(split.ids)}
    for train, holdout in folds:
        assert not set(train.ids) & set(holdout.ids)
        assert len(train) + len(holdout) == len(split)
        assert [order[i] for i in holdout.ids] == sorted(order[i] for i in holdout.ids)
