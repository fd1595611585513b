"""Label convention and the prediction value types shared by every module."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

PROB_TOLERANCE = 1e-6


class Label(enum.IntEnum):
    # FAKE is index 0, REAL index 1; probability vectors are always (p_fake, p_real).
    FAKE = 0
    REAL = 1

    @classmethod
    def parse(cls, value) -> "Label":
        if isinstance(value, Label):
            return value
        text = str(value).strip().lower()
        if text == "fake":
            return cls.FAKE
        if text == "real":
            return cls.REAL
        raise ValueError(f"unknown label value {value!r}")

    def __str__(self) -> str:
        return self.name.lower()


@dataclass(frozen=True)
class ClassProbabilities:
    p_fake: float
    p_real: float

    def __post_init__(self):
        for p in (self.p_fake, self.p_real):
            if not (math.isfinite(p) and -PROB_TOLERANCE <= p <= 1 + PROB_TOLERANCE):
                raise ValueError(f"probability out of range: {p!r}")
        if abs(self.p_fake + self.p_real - 1.0) > PROB_TOLERANCE:
            raise ValueError(
                f"probabilities must sum to 1 (got {self.p_fake!r} + {self.p_real!r})"
            )

    @property
    def predicted(self) -> Label:
        # exact ties go to FAKE
        return Label.REAL if self.p_real > self.p_fake else Label.FAKE


@dataclass(frozen=True)
class PredictionRecord:
    post_id: str
    model_name: str
    probs: ClassProbabilities
    predicted: Label

    @classmethod
    def from_probs(cls, post_id: str, model_name: str, p_fake: float, p_real: float):
        probs = ClassProbabilities(float(p_fake), float(p_real))
        return cls(str(post_id), model_name, probs, probs.predicted)


def records_from_array(post_ids, model_name, proba):
    """Build records from an ``(N, 2)`` array ordered ``(p_fake, p_real)``."""
    return [
        PredictionRecord.from_probs(pid, model_name, row[0], row[1])
        for pid, row in zip(post_ids, proba)
    ]
