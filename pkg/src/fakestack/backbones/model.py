from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .. import heads, training
from ..core import PredictionRecord
from ..data_ingest import DatasetSplit
from ..heads import MlpHeadConfig, NetworkParams
from ..training import TrainConfig
from .providers import BackboneProvider, HuggingFaceProvider, LoadedBackbone, load_saved_backbone
from .registry import POOLINGS, BackboneId

logger = logging.getLogger(__name__)


def pool(hidden: torch.Tensor, mask: torch.Tensor, mode: str) -> torch.Tensor:
    """Reduce ``(B, T, H)`` token states to ``(B, H)`` using the attention mask.

    ``first_token``/``last_token`` pick the first/last unmasked position, so
    left- and right-padded batches behave the same.
    """
    if mode not in POOLINGS:
        raise ValueError(f"unknown pooling {mode!r}")
    mask = mask.to(hidden.dtype)
    if mode == "mean":
        return (hidden * mask.unsqueeze(-1)).sum(1) / mask.sum(1, keepdim=True).clamp_min(1.0)
    positions = torch.arange(hidden.shape[1], device=hidden.device).expand(hidden.shape[0], -1)
    if mode == "first_token":
        idx = torch.where(mask > 0, positions, hidden.shape[1]).min(1).values
    else:
        idx = torch.where(mask > 0, positions, -1).max(1).values
    return hidden[torch.arange(hidden.shape[0], device=hidden.device), idx]


class TorchHead(nn.Module):
    """Trainable torch mirror of an MLP-head :class:`NetworkParams`."""

    def __init__(self, params: NetworkParams):
        super().__init__()
        l1, l2, l3 = params.layers
        self.config = dict(params.config)
        self.seed = params.seed
        self.fc1 = nn.Linear(l1.in_dim, l1.out_dim)
        if l1.norm == "batch_norm":
            self.norm = nn.BatchNorm1d(l1.out_dim, eps=heads.NORM_EPS, momentum=heads.BN_MOMENTUM)
        else:
            self.norm = nn.LayerNorm(l1.out_dim, eps=heads.NORM_EPS)
        self.fc2 = nn.Linear(l2.in_dim, l2.out_dim)
        self.dropout = nn.Dropout(l2.dropout)
        self.out = nn.Linear(l3.in_dim, l3.out_dim)
        with torch.no_grad():
            for lin, layer in ((self.fc1, l1), (self.fc2, l2), (self.out, l3)):
                lin.weight.copy_(torch.from_numpy(layer.weight.T.copy()))
                lin.bias.copy_(torch.from_numpy(layer.bias))
            self.norm.weight.copy_(torch.from_numpy(l1.gamma))
            self.norm.bias.copy_(torch.from_numpy(l1.beta))
            if l1.norm == "batch_norm":
                self.norm.running_mean.copy_(torch.from_numpy(l1.running_mean))
                self.norm.running_var.copy_(torch.from_numpy(l1.running_var))

    def forward(self, x):
        h = self.norm(self.fc1(x))
        h = self.dropout(torch.tanh(self.fc2(h)))
        return self.out(h)

    def to_params(self) -> NetworkParams:
        def arr(t):
            return t.detach().cpu().double().numpy().copy()

        is_bn = isinstance(self.norm, nn.BatchNorm1d)
        l1 = heads.DenseLayer(
            arr(self.fc1.weight).T.copy(), arr(self.fc1.bias), "identity",
            "batch_norm" if is_bn else "layer_norm", arr(self.norm.weight), arr(self.norm.bias),
            arr(self.norm.running_mean) if is_bn else None, arr(self.norm.running_var) if is_bn else None,
        )
        l2 = heads.DenseLayer(arr(self.fc2.weight).T.copy(), arr(self.fc2.bias), "tanh", dropout=self.dropout.p)
        l3 = heads.DenseLayer(arr(self.out.weight).T.copy(), arr(self.out.bias), "softmax")
        return NetworkParams((l1, l2, l3), self.seed, "mlp_head", self.config)


class SequenceClassifier(nn.Module):
    def __init__(self, backbone: LoadedBackbone, head: TorchHead, pooling: str, max_seq_len: int):
        super().__init__()
        self.backbone_model = backbone.model
        self.head = head
        self.pooling = pooling
        self.max_seq_len = max_seq_len
        self._loaded = backbone

    def features(self, input_ids, attention_mask):
        states = self._loaded.hidden_states(input_ids, attention_mask)
        return pool(states, attention_mask, self.pooling)

    def forward(self, input_ids, attention_mask):
        return self.head(self.features(input_ids, attention_mask))

    def collate(self, posts):
        enc = self._loaded.tokenizer.encode([p.text for p in posts], self.max_seq_len)
        return {"input_ids": enc.input_ids, "attention_mask": enc.attention_mask}


def fingerprint_module(module: nn.Module) -> str:
    digest = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        digest.update(name.encode())
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


@dataclass(eq=False)
class TrainedBaseModel:
    backbone: BackboneId
    head: NetworkParams
    pooling: str
    max_seq_len: int
    fingerprint: str
    name: str = ""
    module: SequenceClassifier | None = field(default=None, repr=False)
    train_config: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.name:
            self.name = self.backbone.name

    @property
    def loaded(self) -> LoadedBackbone:
        return self.module._loaded

    def refresh(self) -> None:
        """Re-export the head and recompute the fingerprint from the live module."""
        self.head = self.module.head.to_params()
        self.fingerprint = fingerprint_module(self.module)

    def save(self, directory) -> Path:
        directory = Path(directory)
        self.loaded.save(directory / "backbone")
        heads.save_params(self.head, directory / "head")
        manifest = {
            "name": self.name,
            "backbone": self.backbone.name,
            "size_class": self.backbone.size_class,
            "pooling": self.pooling,
            "max_seq_len": self.max_seq_len,
            "fingerprint": self.fingerprint,
            "train_config": self.train_config,
        }
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return directory


def load_trained_model(directory) -> TrainedBaseModel:
    directory = Path(directory)
    doc = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    loaded = load_saved_backbone(directory / "backbone")
    head_params = heads.load_params(directory / "head")
    module = SequenceClassifier(loaded, TorchHead(head_params), doc["pooling"], doc["max_seq_len"])
    module.eval()
    model = TrainedBaseModel(loaded.backbone, module.head.to_params(), doc["pooling"], doc["max_seq_len"],
                             fingerprint_module(module), doc["name"], module, doc.get("train_config", {}))
    if model.fingerprint != doc["fingerprint"]:
        raise ValueError(f"{directory}: checkpoint fingerprint mismatch")
    return model


def _provider(provider):
    return provider if provider is not None else HuggingFaceProvider()


@torch.no_grad()
def encode_batch(backbone: BackboneId | LoadedBackbone, texts, max_seq_len: int = 128, pooling: str | None = None,
                 provider: BackboneProvider | None = None, batch_size: int = 64, diagnostics: list | None = None) -> np.ndarray:
    """Pooled backbone representations, one row per text (evaluation mode).

    Indices of texts that tokenized to no content tokens are appended to
    ``diagnostics`` when a list is supplied.
    """
    texts = list(texts)
    if not texts:
        raise ValueError("texts must be a non-empty list")
    loaded = backbone if isinstance(backbone, LoadedBackbone) else _provider(provider).load(backbone)
    pooling = pooling or loaded.backbone.default_pooling
    loaded.model.eval()
    rows = []
    for start in range(0, len(texts), batch_size):
        enc = loaded.tokenizer.encode(texts[start:start + batch_size], max_seq_len)
        if enc.empty:
            logger.warning("%d texts produced no tokens for %s", len(enc.empty), loaded.backbone)
            if diagnostics is not None:
                diagnostics.extend(start + i for i in enc.empty)
        states = loaded.hidden_states(enc.input_ids, enc.attention_mask)
        rows.append(pool(states, enc.attention_mask, pooling).double().numpy())
    out = np.concatenate(rows, axis=0)
    if out.shape[1] != loaded.hidden_size:
        raise ValueError(f"pooled width {out.shape[1]} != hidden width {loaded.hidden_size}")
    return out


def build_model(backbone: BackboneId, head_cfg: MlpHeadConfig = MlpHeadConfig(), seed: int = 0,
                provider: BackboneProvider | None = None, pooling: str | None = None,
                max_seq_len: int = 128, name: str = "") -> TrainedBaseModel:
    """Backbone plus a freshly Xavier-initialised head, before any training."""
    loaded = _provider(provider).load(backbone)
    head_params = heads.build_mlp_head(head_cfg, loaded.hidden_size, seed)
    pooling = pooling or backbone.default_pooling
    module = SequenceClassifier(loaded, TorchHead(head_params), pooling, max_seq_len)
    module.eval()
    return TrainedBaseModel(backbone, module.head.to_params(), pooling, max_seq_len,
                            fingerprint_module(module), name or backbone.name, module)


def fine_tune(backbone: BackboneId, head_cfg: MlpHeadConfig, train: DatasetSplit, val: DatasetSplit,
              cfg: TrainConfig = TrainConfig(), provider: BackboneProvider | None = None,
              pooling: str | None = None, name: str = ""):
    """Jointly train backbone and head; returns ``(TrainedBaseModel, history)``.

    The returned model holds the epoch with the best validation accuracy.
    """
    cfg.validate()
    training.check_disjoint(train, val)
    torch.manual_seed(cfg.seed)
    model = build_model(backbone, head_cfg, cfg.seed, provider, pooling, cfg.max_seq_len, name)
    model.train_config = {k: v for k, v in cfg.__dict__.items()}
    history = training.fit(model.module, model.module.collate, train, val, cfg, model.name)
    model.module.eval()
    if history:
        model.refresh()
    return model, history


def predict_batch(model: TrainedBaseModel, posts, batch_size: int = 64) -> list[PredictionRecord]:
    posts = list(posts)
    if not posts:
        return []
    return training.predict_records(model.module, model.module.collate, posts, model.name, batch_size)


def token_ids(model: TrainedBaseModel, text: str) -> list[int]:
    return model.loaded.tokenizer.token_ids(text, model.max_seq_len)[0]
