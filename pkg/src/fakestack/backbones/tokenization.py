"""Tokenizer adapters exposing one ``encode`` call over HF and offline tokenizers."""

from __future__ import annotations

import json
import re
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import torch

PAD, UNK, BOS, EOS = 0, 1, 2, 3
N_SPECIAL = 4

# where special tokens go for each family, mirroring the pretrained tokenizers
LAYOUTS = {
    "bert": "wrap",
    "roberta": "wrap",
    "distilroberta": "wrap",
    "albert": "wrap",
    "deberta": "wrap",
    "bart": "wrap",
    "xlnet": "xlnet",
    "gpt2": "plain",
}

_WORD_RE = re.compile(r"\w+|[^\w\s]")


@dataclass
class EncodedBatch:
    input_ids: torch.Tensor
    attention_mask: torch.Tensor
    # rows whose text produced no content tokens
    empty: list[int] = field(default_factory=list)


class HashingTokenizer:
    """Deterministic word-hashing tokenizer for offline random-init backbones.

    Words are lowercased and mapped to ``N_SPECIAL + crc32(word) % buckets``.
    Special-token placement follows the family layout; xlnet pads on the left
    and gpt2 uses its end-of-text id for padding.
    """

    def __init__(self, vocab_size: int, family: str):
        if vocab_size <= N_SPECIAL:
            raise ValueError("vocab_size too small")
        self.vocab_size = vocab_size
        self.family = family
        self.layout = LAYOUTS[family]
        self.pad_id = EOS if family == "gpt2" else PAD
        self.padding_side = "left" if self.layout == "xlnet" else "right"

    def words(self, text: str) -> list[int]:
        buckets = self.vocab_size - N_SPECIAL
        return [N_SPECIAL + zlib.crc32(w.encode("utf-8")) % buckets for w in _WORD_RE.findall(text.lower())]

    def token_ids(self, text: str, max_seq_len: int) -> tuple[list[int], bool]:
        words = self.words(text)
        empty = not words
        if self.layout == "wrap":
            ids = [BOS] + words[: max_seq_len - 2] + [EOS]
        elif self.layout == "xlnet":
            ids = words[: max_seq_len - 2] + [EOS, BOS]
        else:
            ids = words[:max_seq_len] or [EOS]
        return ids, empty

    def encode(self, texts, max_seq_len: int) -> EncodedBatch:
        rows, empty = [], []
        for i, text in enumerate(texts):
            ids, is_empty = self.token_ids(text, max_seq_len)
            rows.append(ids)
            if is_empty:
                empty.append(i)
        width = max(len(r) for r in rows)
        input_ids = torch.full((len(rows), width), self.pad_id, dtype=torch.long)
        mask = torch.zeros((len(rows), width), dtype=torch.long)
        for i, ids in enumerate(rows):
            if self.padding_side == "left":
                input_ids[i, width - len(ids):] = torch.tensor(ids)
                mask[i, width - len(ids):] = 1
            else:
                input_ids[i, :len(ids)] = torch.tensor(ids)
                mask[i, :len(ids)] = 1
        return EncodedBatch(input_ids, mask, empty)

    def save(self, directory) -> None:
        doc = {"kind": "hashing", "vocab_size": self.vocab_size, "family": self.family}
        Path(directory, "hashing_tokenizer.json").write_text(json.dumps(doc, sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, directory) -> "HashingTokenizer":
        doc = json.loads(Path(directory, "hashing_tokenizer.json").read_text(encoding="utf-8"))
        return cls(doc["vocab_size"], doc["family"])


class HFTokenizerAdapter:
    """Wraps a ``transformers`` tokenizer with the same ``encode`` contract."""

    def __init__(self, tokenizer, family: str):
        self.tok = tokenizer
        self.family = family
        if tokenizer.pad_token is None:
            # gpt2 ships without a padding token
            tokenizer.pad_token = tokenizer.eos_token
        self.pad_id = tokenizer.pad_token_id

    def token_ids(self, text: str, max_seq_len: int) -> tuple[list[int], bool]:
        ids = self.tok(text, truncation=True, max_length=max_seq_len)["input_ids"]
        empty = not self.tok(text, add_special_tokens=False)["input_ids"]
        if not ids:
            ids = [self.tok.eos_token_id]
        return ids, empty

    def encode(self, texts, max_seq_len: int) -> EncodedBatch:
        enc = self.tok(list(texts), truncation=True, max_length=max_seq_len, padding=True, return_tensors="pt")
        ids, mask = enc["input_ids"], enc["attention_mask"]
        empty = [i for i, t in enumerate(texts) if not self.tok(t, add_special_tokens=False)["input_ids"]]
        for i in range(len(texts)):
            if int(mask[i].sum()) == 0:
                pos = 0 if self.tok.padding_side == "right" else ids.shape[1] - 1
                ids[i, pos] = self.tok.eos_token_id
                mask[i, pos] = 1
        return EncodedBatch(ids, mask, empty)

    def save(self, directory) -> None:
        self.tok.save_pretrained(directory)
