"""Backbone providers: where encoder weights and tokenizers come from.

``HuggingFaceProvider`` loads published checkpoints through ``transformers``
with a local cache directory (``FAKESTACK_WEIGHTS_DIR``) and an offline
switch. ``RandomInitProvider`` builds miniature randomly initialised models
of each family without any download; it backs tests and smoke runs.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import torch

from ..errors import AvailabilityError
from .registry import BACKBONE_NAMES, BackboneId, checkpoint_name
from .tokenization import BOS, EOS, PAD, HashingTokenizer, HFTokenizerAdapter

logger = logging.getLogger(__name__)

WEIGHTS_DIR_ENV = "FAKESTACK_WEIGHTS_DIR"


@dataclass
class LoadedBackbone:
    backbone: BackboneId
    model: torch.nn.Module
    tokenizer: object
    hidden_size: int
    provider: str
    source: str

    def hidden_states(self, input_ids, attention_mask):
        out = self.model(input_ids=input_ids, attention_mask=attention_mask)
        return out.last_hidden_state

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.model.save_pretrained(directory, safe_serialization=True)
        self.tokenizer.save(directory)
        doc = {"provider": self.provider, "source": self.source, "name": self.backbone.name,
               "size_class": self.backbone.size_class, "hidden_size": self.hidden_size}
        (directory / "provider.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


class BackboneProvider(Protocol):
    name: str

    def load(self, backbone: BackboneId) -> LoadedBackbone: ...


def _hidden_size(config) -> int:
    for attr in ("hidden_size", "d_model", "n_embd"):
        if getattr(config, attr, None):
            return int(getattr(config, attr))
    raise ValueError(f"cannot determine hidden width of {type(config).__name__}")


class HuggingFaceProvider:
    name = "huggingface"

    def __init__(self, cache_dir=None, offline: bool = False, checkpoints: dict | None = None):
        self.cache_dir = cache_dir or os.environ.get(WEIGHTS_DIR_ENV)
        self.offline = offline
        self.checkpoints = checkpoints

    def load(self, backbone: BackboneId) -> LoadedBackbone:
        from transformers import AutoModel, AutoTokenizer

        source = checkpoint_name(backbone, self.checkpoints)
        try:
            tok = AutoTokenizer.from_pretrained(source, cache_dir=self.cache_dir, local_files_only=self.offline)
            model = AutoModel.from_pretrained(source, cache_dir=self.cache_dir, local_files_only=self.offline)
        except (OSError, ValueError) as exc:
            mode = "offline mode, not in cache" if self.offline else "download failed"
            raise AvailabilityError(f"backbone {backbone} ({source}) unavailable: {mode}: {exc}") from exc
        hidden = _hidden_size(model.config)
        if backbone.size_class == "base" and hidden != 768:
            raise AvailabilityError(f"{source}: expected hidden width 768 for a base backbone, got {hidden}")
        model.eval()
        return LoadedBackbone(backbone, model, HFTokenizerAdapter(tok, backbone.name), hidden, self.name, source)


def _random_config(family: str, vocab: int, hidden: int, layers: int, max_pos: int):
    import transformers as tf

    heads = 2
    inter = hidden * 2
    common = dict(vocab_size=vocab, pad_token_id=PAD, bos_token_id=BOS, eos_token_id=EOS)
    bert_like = dict(hidden_size=hidden, num_hidden_layers=layers, num_attention_heads=heads,
                     intermediate_size=inter, max_position_embeddings=max_pos + 4, **common)
    if family == "bert":
        return tf.BertConfig(**bert_like)
    if family in ("roberta", "distilroberta"):
        return tf.RobertaConfig(**bert_like)
    if family == "albert":
        return tf.AlbertConfig(embedding_size=max(8, hidden // 2), **bert_like)
    if family == "deberta":
        return tf.DebertaConfig(**bert_like)
    if family == "gpt2":
        return tf.GPT2Config(vocab_size=vocab, n_embd=hidden, n_layer=layers, n_head=heads,
                             n_positions=max_pos + 4, bos_token_id=EOS, eos_token_id=EOS, pad_token_id=EOS)
    if family == "xlnet":
        return tf.XLNetConfig(d_model=hidden, n_layer=layers, n_head=heads, d_inner=inter, **common)
    if family == "bart":
        return tf.BartConfig(d_model=hidden, encoder_layers=max(1, layers // 2), decoder_layers=max(1, layers // 2),
                             encoder_attention_heads=heads, decoder_attention_heads=heads,
                             encoder_ffn_dim=inter, decoder_ffn_dim=inter, max_position_embeddings=max_pos + 4,
                             decoder_start_token_id=EOS, forced_eos_token_id=EOS, **common)
    raise ValueError(f"unknown family {family!r}")


class RandomInitProvider:
    """Miniature randomly initialised backbones, built locally.

    Weights depend only on ``(seed, family)`` so repeated loads agree.
    """

    name = "random-init"

    def __init__(self, hidden_size: int = 32, num_layers: int = 2, vocab_size: int = 4096,
                 max_positions: int = 256, seed: int = 0):
        self.hidden_size = hidden_size
        self.num_layers = num_layers
        self.vocab_size = vocab_size
        self.max_positions = max_positions
        self.seed = seed

    def load(self, backbone: BackboneId) -> LoadedBackbone:
        from transformers import AutoModel

        family = backbone.name
        cfg = _random_config(family, self.vocab_size, self.hidden_size, self.num_layers, self.max_positions)
        state = torch.random.get_rng_state()
        torch.manual_seed(self.seed * 1000 + BACKBONE_NAMES.index(family))
        try:
            model = AutoModel.from_config(cfg)
        finally:
            torch.random.set_rng_state(state)
        model.eval()
        tok = HashingTokenizer(self.vocab_size, family)
        source = f"random-init:h{self.hidden_size}-l{self.num_layers}-v{self.vocab_size}-s{self.seed}"
        return LoadedBackbone(backbone, model, tok, self.hidden_size, self.name, source)


def load_saved_backbone(directory) -> LoadedBackbone:
    """Reload a backbone written by :meth:`LoadedBackbone.save`; never touches the network."""
    from transformers import AutoModel, AutoTokenizer

    directory = Path(directory)
    doc = json.loads((directory / "provider.json").read_text(encoding="utf-8"))
    backbone = BackboneId(doc["name"], doc["size_class"])
    model = AutoModel.from_pretrained(directory, local_files_only=True)
    model.eval()
    if (directory / "hashing_tokenizer.json").exists():
        tok = HashingTokenizer.load(directory)
    else:
        tok = HFTokenizerAdapter(AutoTokenizer.from_pretrained(directory, local_files_only=True), backbone.name)
    return LoadedBackbone(backbone, model, tok, doc["hidden_size"], doc["provider"], doc["source"])


def make_provider(kind: str = "huggingface", offline: bool = False, cache_dir=None, **options) -> BackboneProvider:
    if kind == "huggingface":
        return HuggingFaceProvider(cache_dir=cache_dir, offline=offline, checkpoints=options.get("checkpoints"))
    if kind == "random-init":
        return RandomInitProvider(**options)
    raise ValueError(f"unknown backbone provider {kind!r}")
