import numpy as np
import pytest
import torch

from fakestack.backbones import (
    BACKBONE_NAMES,
    BackboneId,
    HuggingFaceProvider,
    TrainConfig,
    build_model,
    encode_batch,
    fine_tune,
    load_trained_model,
    pool,
    predict_batch,
    registry,
    token_ids,
    train_classic_head,
)
from fakestack.backbones.tokenization import BOS, EOS, HashingTokenizer
from fakestack.core import Label
from fakestack.synthetic import mirror_split
from fakestack.data_ingest import DatasetSplit, LabeledPost
from fakestack.errors import AvailabilityError, DegenerateDataError, LeakageError
from fakestack.heads import MlpHeadConfig

FAST = TrainConfig(learning_rate=1e-3, epochs=30, batch_size=8, max_seq_len=32, early_stop_patience=0)


def test_registry_order():
    ids = registry()
    assert len(ids) == 8 and ids[3].name == "roberta"
    assert [b.name for b in ids] == list(BACKBONE_NAMES)
    with pytest.raises(ValueError):
        BackboneId("gpt3")


def test_default_pooling_by_family():
    assert BackboneId("bert").default_pooling == "first_token"
    assert BackboneId("gpt2").default_pooling == "last_token"


def test_pool_modes_respect_mask_on_both_sides():
    hidden = torch.arange(2 * 4 * 1, dtype=torch.float64).reshape(2, 4, 1)
    mask = torch.tensor([[1, 1, 1, 0], [0, 1, 1, 1]])
    assert pool(hidden, mask, "first_token").flatten().tolist() == [0.0, 5.0]
    assert pool(hidden, mask, "last_token").flatten().tolist() == [2.0, 7.0]
    assert pool(hidden, mask, "mean").flatten().tolist() == [1.0, 6.0]
    with pytest.raises(ValueError):
        pool(hidden, mask, "max")


def test_hashing_tokenizer_layouts():
    wrap = HashingTokenizer(100, "bert").token_ids("Hello world", 16)[0]
    assert wrap[0] == BOS and wrap[-1] == EOS and len(wrap) == 4
    xl = HashingTokenizer(100, "xlnet")
    assert xl.token_ids("Hello world", 16)[0][-2:] == [EOS, BOS]
    enc = xl.encode(["a", "a b c"], 16)
    assert enc.attention_mask[0].tolist() == [0, 0, 1, 1, 1]     # left padding
    gpt = HashingTokenizer(100, "gpt2").encode(["a", "a b c"], 16)
    assert gpt.input_ids[0, -1].item() == EOS                    # pad id is end-of-text
    assert HashingTokenizer(100, "bert").encode(["...", ""], 8).empty == [1]


def test_encode_batch_shape_and_identical_rows(provider):
    diag = []
    out = encode_batch(BackboneId("roberta", "small-proxy"), ["same text", "other", "same text", ""],
                       max_seq_len=16, provider=provider, diagnostics=diag)
    assert out.shape == (4, 32)
    assert np.array_equal(out[0], out[2])
    assert diag == [3]


def test_unavailable_offline_backbone_raises(tmp_path):
    prov = HuggingFaceProvider(cache_dir=str(tmp_path), offline=True)
    with pytest.raises(AvailabilityError, match="offline"):
        prov.load(BackboneId("bert", "small-proxy"))


@pytest.mark.parametrize("family", ["bert", "gpt2", "xlnet"])
def test_fine_tune_memorizes_toy_split(provider, toy32, family):
    model, history = fine_tune(BackboneId(family, "small-proxy"), MlpHeadConfig(), toy32, mirror_split(toy32),
                               FAST, provider=provider)
    preds = predict_batch(model, toy32.posts)
    acc = np.mean([int(r.predicted) == int(p.label) for r, p in zip(preds, toy32.posts)])
    assert acc >= 0.95
    assert max(h["val_accuracy"] for h in history) == acc


def test_fine_tune_rejects_leakage(provider, toy32):
    leaky = DatasetSplit("validation", (toy32.posts[0],))
    with pytest.raises(LeakageError):
        fine_tune(BackboneId("bert", "small-proxy"), MlpHeadConfig(), toy32, leaky, FAST, provider=provider)


def test_learning_rate_range_enforced(provider, toy32, toy_val):
    with pytest.raises(ValueError, match="force"):
        fine_tune(BackboneId("bert"), MlpHeadConfig(), toy32, toy_val, TrainConfig(learning_rate=5e-2),
                  provider=provider)


def test_predict_order_determinism_and_checkpoint(provider, toy32, tmp_path):
    model = build_model(BackboneId("gpt2", "small-proxy"), MlpHeadConfig(), seed=3, provider=provider,
                        max_seq_len=32)
    posts = toy32.posts[:7]
    first = predict_batch(model, posts)
    assert [r.post_id for r in first] == [p.id for p in posts]
    assert first == predict_batch(model, posts)
    model.save(tmp_path / "ck")
    back = load_trained_model(tmp_path / "ck")
    assert back.fingerprint == model.fingerprint
    assert predict_batch(back, posts) == first
    assert token_ids(back, "hello") == token_ids(model, "hello")


def test_classic_heads():
    x = np.array([[0.0, 0.0], [1.0, 1.0]])
    head = train_classic_head(x, [Label.FAKE, Label.REAL], "svm_linear")
    assert head.predict(x).tolist() == [0, 1]
    rng = np.random.default_rng(0)
    feats = rng.normal(size=(40, 4))
    labels = (feats[:, 0] > 0).astype(int)
    for kind in ("svm_rbf", "decision_tree"):
        proba = train_classic_head(feats, labels, kind).predict_proba(feats)
        assert proba.shape == (40, 2) and np.allclose(proba.sum(1), 1.0)
    with pytest.raises(DegenerateDataError):
        train_classic_head(x, [Label.FAKE, Label.FAKE], "svm_rbf")
