"""Training loop shared by backbone fine-tuning and the baseline models."""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .core import records_from_array
from .data_ingest import DatasetSplit, LabeledPost
from .errors import LeakageError, NonFiniteLossError
from .metrics import confusion, weighted

logger = logging.getLogger(__name__)

LR_RANGE = (2e-6, 1e-3)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 2e-6
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0
    early_stop_patience: int = 3
    max_seq_len: int = 128
    weight_decay: float = 0.01
    force: bool = False

    def validate(self):
        lo, hi = LR_RANGE
        if not self.force and not lo <= self.learning_rate <= hi:
            raise ValueError(
                f"learning_rate {self.learning_rate:g} outside [{lo:g}, {hi:g}]; set force to override"
            )
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0 or self.batch_size < 1 or self.max_seq_len < 2 or self.early_stop_patience < 0:
            raise ValueError(f"invalid training config {asdict(self)}")
        return self


# collate(posts) -> dict of model inputs; the module maps them to (B, 2) logits
Collate = Callable[[Sequence[LabeledPost]], dict]


def check_disjoint(train: DatasetSplit, val: DatasetSplit) -> None:
    overlap = sorted(set(train.ids) & set(val.ids))
    if overlap:
        shown = ", ".join(repr(i) for i in overlap[:10])
        raise LeakageError(f"{len(overlap)} validation ids also in training split: {shown}", ids=overlap)


@torch.no_grad()
def predict_proba(module: torch.nn.Module, collate: Collate, posts: Sequence[LabeledPost], batch_size: int = 64) -> np.ndarray:
    """Evaluation-mode ``(N, 2)`` probabilities in float64."""
    was_training = module.training
    module.eval()
    out = []
    for start in range(0, len(posts), batch_size):
        logits = module(**collate(posts[start:start + batch_size]))
        out.append(torch.softmax(logits.double(), dim=-1).cpu().numpy())
    module.train(was_training)
    if not out:
        return np.zeros((0, 2))
    return np.concatenate(out, axis=0)


def predict_records(module, collate, posts, model_name, batch_size=64):
    proba = predict_proba(module, collate, list(posts), batch_size)
    return records_from_array([p.id for p in posts], model_name, proba)


def fit(module: torch.nn.Module, collate: Collate, train: DatasetSplit, val: DatasetSplit,
        cfg: TrainConfig, model_name: str):
    """Train ``module`` in place and leave it holding the best-validation weights.

    Returns the per-epoch history. Validation accuracy is computed through
    the metrics module from the same records ``predict`` would produce.
    Training stops after ``early_stop_patience`` epochs without strict
    improvement (0 disables early stopping).
    """
    cfg.validate()
    if not len(train) or not len(val):
        raise ValueError("training and validation splits must be non-empty")
    check_disjoint(train, val)
    history = []
    if cfg.epochs == 0:
        return history

    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    optim = torch.optim.AdamW(module.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    posts = list(train.posts)
    labels = torch.as_tensor(train.labels)
    best_acc, best_state, stale = -1.0, None, 0
    for epoch in range(1, cfg.epochs + 1):
        module.train()
        order = torch.randperm(len(posts), generator=gen).tolist()
        total_loss, correct = 0.0, 0
        for batch_no, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            logits = module(**collate([posts[i] for i in idx]))
            target = labels[idx]
            loss = F.cross_entropy(logits.float(), target)
            if not math.isfinite(loss.item()):
                raise NonFiniteLossError(epoch, batch_no, loss.item())
            optim.zero_grad()
            loss.backward()
            optim.step()
            total_loss += loss.item() * len(idx)
            correct += int((logits[:, 1] > logits[:, 0]).long().eq(target).sum())
        records = predict_records(module, collate, val.posts, model_name, cfg.batch_size)
        val_acc = weighted(confusion(records, val)).accuracy
        history.append({
            "epoch": epoch,
            "train_loss": total_loss / len(posts),
            "train_accuracy": correct / len(posts),
            "val_accuracy": val_acc,
        })
        logger.info("%s epoch %d loss %.4f val_acc %.4f", model_name, epoch, total_loss / len(posts), val_acc)
        if val_acc > best_acc:
            best_acc, stale = val_acc, 0
            best_state = copy.deepcopy(module.state_dict())
        else:
            stale += 1
            if cfg.early_stop_patience and stale >= cfg.early_stop_patience:
                break
    module.load_state_dict(best_state)
    module.eval()
    return history
