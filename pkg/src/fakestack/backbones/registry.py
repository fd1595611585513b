from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import yaml

BACKBONE_NAMES = ("bert", "gpt2", "xlnet", "roberta", "distilroberta", "albert", "bart", "deberta")
SIZE_CLASSES = ("base", "small-proxy")
POOLINGS = ("first_token", "last_token", "mean")

# xlnet puts its summary token at the end of the sequence, bart's
# end-of-sequence token is the last real decoder position.
DEFAULT_POOLING = {
    "bert": "first_token",
    "roberta": "first_token",
    "distilroberta": "first_token",
    "albert": "first_token",
    "deberta": "first_token",
    "xlnet": "last_token",
    "gpt2": "last_token",
    "bart": "last_token",
}

BASE_HIDDEN_WIDTH = 768


@dataclass(frozen=True)
class BackboneId:
    name: str
    size_class: str = "base"

    def __post_init__(self):
        if self.name not in BACKBONE_NAMES:
            raise ValueError(f"unknown backbone {self.name!r}; expected one of {BACKBONE_NAMES}")
        if self.size_class not in SIZE_CLASSES:
            raise ValueError(f"unknown size class {self.size_class!r}")

    @property
    def default_pooling(self) -> str:
        return DEFAULT_POOLING[self.name]

    def __str__(self):
        return self.name if self.size_class == "base" else f"{self.name}@{self.size_class}"


def registry(size_class: str = "base") -> list[BackboneId]:
    return [BackboneId(name, size_class) for name in BACKBONE_NAMES]


@lru_cache(maxsize=None)
def _bundled_checkpoints() -> dict:
    text = resources.files("fakestack.data").joinpath("backbones.yaml").read_text(encoding="utf-8")
    return yaml.safe_load(text)


def checkpoint_name(backbone: BackboneId, overrides: dict | None = None) -> str:
    table = overrides or _bundled_checkpoints()
    return table[backbone.size_class][backbone.name]
