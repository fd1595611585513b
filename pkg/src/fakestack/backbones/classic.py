"""Classic classifiers (SVM, decision tree) over frozen backbone features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.svm import SVC
from sklearn.tree import DecisionTreeClassifier

from ..errors import DegenerateDataError

CLASSIC_KINDS = ("svm_rbf", "svm_linear", "decision_tree")
# SVC's Platt scaling runs an internal 5-fold CV
MIN_PER_CLASS_FOR_PROBA = 5


@dataclass
class ClassicHeadModel:
    kind: str
    estimator: object
    probability: bool

    def predict(self, features) -> np.ndarray:
        return self.estimator.predict(np.asarray(features, dtype=np.float64)).astype(np.int64)

    def predict_proba(self, features) -> np.ndarray:
        """``(N, 2)`` probabilities ordered ``(p_fake, p_real)``."""
        if not self.probability:
            raise NotImplementedError(f"{self.kind} head was fitted without probability calibration")
        proba = self.estimator.predict_proba(np.asarray(features, dtype=np.float64))
        out = np.zeros((len(proba), 2))
        out[:, self.estimator.classes_] = proba
        return out


def check_two_classes(labels) -> np.ndarray:
    y = np.asarray([int(v) for v in labels], dtype=np.int64)
    if len(y) < 2 or len(np.unique(y)) < 2:
        raise DegenerateDataError("need at least two samples covering both classes")
    return y


def train_classic_head(features, labels, kind: str = "svm_rbf", seed: int = 0) -> ClassicHeadModel:
    if kind not in CLASSIC_KINDS:
        raise ValueError(f"unknown classic head kind {kind!r}; expected one of {CLASSIC_KINDS}")
    x = np.asarray(features, dtype=np.float64)
    y = check_two_classes(labels)
    if kind == "decision_tree":
        est, probability = DecisionTreeClassifier(random_state=seed), True
    else:
        probability = bool(np.bincount(y).min() >= MIN_PER_CLASS_FOR_PROBA)
        est = SVC(kernel="rbf" if kind == "svm_rbf" else "linear", probability=probability, random_state=seed)
    est.fit(x, y)
    return ClassicHeadModel(kind, est, probability)
