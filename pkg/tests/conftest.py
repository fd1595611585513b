import os

import pytest
import torch

from fakestack.backbones import RandomInitProvider
from fakestack.synthetic import toy_split

torch.set_num_threads(1)
os.environ.setdefault("HF_HUB_OFFLINE", "1")


@pytest.fixture(scope="session")
def provider():
    return RandomInitProvider(hidden_size=32, num_layers=2, vocab_size=2048, seed=0)


@pytest.fixture
def toy32():
    return toy_split(32, seed=1, name="train", id_prefix="tr")


@pytest.fixture
def toy_val():
    return toy_split(16, seed=2, name="validation", id_prefix="va")


def write_csv(path, rows, header="id,tweet,label"):
    path.write_text(header + "\n" + "".join(r + "\n" for r in rows), encoding="utf-8")
    return path
