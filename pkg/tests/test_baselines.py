import numpy as np
import pytest

from fakestack.baselines import (
    KINDS,
    BaselineConfig,
    Vocab,
    attention_weights,
    build_baseline,
    build_vocab,
    load_baseline,
    predict_baseline,
    split_sentences,
    tokenize,
    train_baseline,
)
from fakestack.core import Label
from fakestack.synthetic import mirror_split
from fakestack.data_ingest import DatasetSplit, LabeledPost
from fakestack.training import TrainConfig

MEMORIZE = TrainConfig(learning_rate=1e-3, epochs=40, batch_size=8, early_stop_patience=0)


def corpus(*texts):
    return DatasetSplit("custom", tuple(LabeledPost(str(i), t, Label.FAKE) for i, t in enumerate(texts)))


def train_accuracy(model, split):
    preds = predict_baseline(model, split.posts)
    return np.mean([int(r.predicted) == int(p.label) for r, p in zip(preds, split.posts)])


def test_tokenize_and_sentences():
    assert tokenize("Hello, World!") == ["hello", ",", "world", "!"]
    assert split_sentences("One. Two? Three") == ["One.", "Two?", "Three"]


def test_vocab_min_freq():
    split = corpus("a a b", "a c")
    assert build_vocab(split, min_freq=2).itos == ("<pad>", "<unk>", "a")
    assert set(build_vocab(split, min_freq=1).itos) == {"<pad>", "<unk>", "a", "b", "c"}
    assert build_vocab(split) == build_vocab(split)
    assert build_vocab(split).encode(["a", "zzz"]) == [2, 1]


def test_vocab_save_load(tmp_path):
    vocab = build_vocab(corpus("x y z", "y"))
    vocab.save(tmp_path / "v.txt")
    assert Vocab.load(tmp_path / "v.txt") == vocab


def test_cnn1d_defaults():
    cfg = BaselineConfig.for_kind("cnn1d")
    assert cfg.filters == 256 and cfg.filter_sizes == (1, 2, 3, 4, 5, 6)
    model = build_baseline(cfg, build_vocab(corpus("a b")))
    convs = [m for m in model.modules() if m.__class__.__name__ == "Conv1d"]
    assert sorted(c.kernel_size[0] for c in convs) == [1, 2, 3, 4, 5, 6]
    assert all(c.out_channels == 256 for c in convs)


def test_bilstm_defaults():
    model = build_baseline(BaselineConfig.for_kind("bilstm_attn"), build_vocab(corpus("a b")))
    lstm = next(m for m in model.modules() if m.__class__.__name__ == "LSTM")
    assert lstm.hidden_size == 128 and lstm.bidirectional and lstm.num_layers == 1


@pytest.mark.parametrize("cfg", [
    dict(kind="cnn1d", filters=256),
    dict(kind="bilstm_attn", filters=8, filter_sizes=(2,)),
    dict(kind="mlp"),
    dict(kind="rcnn", dropout=1.0),
])
def test_inconsistent_configs(cfg):
    with pytest.raises(ValueError):
        BaselineConfig(**cfg).validate()


@pytest.mark.parametrize("kind", KINDS)
def test_memorizes_toy_split(kind, toy32):
    model = build_baseline(BaselineConfig.for_kind(kind), build_vocab(toy32), seed=0)
    train_baseline(model, toy32, mirror_split(toy32), MEMORIZE)
    assert train_accuracy(model, toy32) >= 0.95


def test_han_handles_multi_sentence_posts(toy32, toy_val):
    posts = tuple(LabeledPost(p.id, p.text.replace(" ", ". ", 2), p.label) for p in toy32.posts)
    split = DatasetSplit("train", posts)
    model = build_baseline(BaselineConfig.for_kind("han"), build_vocab(split), seed=0)
    batch = model.collate(split.posts[:2])
    assert batch["ids"].dim() == 3 and batch["sentence_lengths"].tolist() == [3, 3]


def test_attention_weights_sum_to_one(toy32):
    model = build_baseline(BaselineConfig.for_kind("bilstm_attn"), build_vocab(toy32))
    weights = attention_weights(model, toy32.posts[:3])
    for w, post in zip(weights, toy32.posts[:3]):
        assert len(w) == len(tokenize(post.text)) and abs(w.sum() - 1.0) < 1e-6


def test_save_load_round_trip(toy32, tmp_path):
    model = build_baseline(BaselineConfig.for_kind("amcnn", embedding_dim=16), build_vocab(toy32), seed=4)
    model.save(tmp_path / "b")
    back = load_baseline(tmp_path / "b")
    model.eval()
    assert predict_baseline(back, toy32.posts) == predict_baseline(model, toy32.posts)
