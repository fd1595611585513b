"""Synthetic data for smoke runs and learnability checks."""

from __future__ import annotations

import numpy as np

from .core import Label
from .data_ingest import DatasetSplit, LabeledPost

FAKE_WORDS = ("miracle", "cure", "hoax", "secret", "5g", "banned", "shocking", "exposed", "plandemic", "garlic")
REAL_WORDS = ("cases", "reported", "ministry", "tested", "vaccine", "trial", "hospital", "guidance", "data", "update")
FILLER = ("covid", "the", "people", "today", "new", "says", "in", "of", "and", "virus", "health", "state")


def toy_split(n: int, seed: int = 0, name: str = "custom", id_prefix: str = "toy", signal_words: int = 2,
              length: int = 12) -> DatasetSplit:
    """Balanced posts whose label is carried by a few class-specific words."""
    rng = np.random.default_rng(seed)
    posts = []
    for i in range(n):
        label = Label.FAKE if i % 2 == 0 else Label.REAL
        lexicon = FAKE_WORDS if label is Label.FAKE else REAL_WORDS
        words = list(rng.choice(FILLER, size=length - signal_words))
        for w in rng.choice(lexicon, size=signal_words, replace=False):
            words.insert(int(rng.integers(0, len(words) + 1)), str(w))
        posts.append(LabeledPost(f"{id_prefix}-{i}", " ".join(words), label))
    return DatasetSplit(name, tuple(posts))


def simulated_member_outputs(n: int, n_members: int = 8, member_accuracy: float = 0.85, seed: int = 0):
    """``p_real`` outputs of simulated ensemble members.

    Every member votes for the hidden gold class with probability
    ``member_accuracy`` and reports a confident probability for its vote.
    Returns ``(features, labels)`` where the label is the strict-majority
    vote ``sum(features > 0.5) > n_members / 2`` (ties are FAKE).
    """
    rng = np.random.default_rng(seed)
    gold = rng.integers(0, 2, n)
    correct = rng.random((n, n_members)) < member_accuracy
    vote = np.where(correct, gold[:, None], 1 - gold[:, None])
    confidence = rng.beta(6.0, 1.5, (n, n_members))
    features = np.where(vote == 1, confidence, 1.0 - confidence)
    labels = ((features > 0.5).sum(axis=1) > n_members / 2).astype(np.int64)
    return features, labels


def mirror_split(split: DatasetSplit, name: str = "validation", prefix: str = "mirror") -> DatasetSplit:
    """The same posts under fresh ids.

    Used as the validation split of memorization checks, so best-epoch
    selection tracks evaluation-mode training accuracy.
    """
    posts = tuple(LabeledPost(f"{prefix}:{p.id}", p.text, p.label) for p in split.posts)
    return DatasetSplit(name, posts)
