"""Traditional text classifiers used as comparison baselines.

Five kinds share one vocabulary, one collate path and the common training
loop: ``bilstm_attn``, ``cnn1d``, ``han``, ``rcnn`` and ``amcnn``. The
recurrent layers use 128 units per direction (256 concatenated).
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from . import training
from .data_ingest import DatasetSplit
from .heads import read_tensors, write_tensors
from .training import TrainConfig

KINDS = ("bilstm_attn", "cnn1d", "han", "rcnn", "amcnn")
CONV_KINDS = ("cnn1d", "amcnn")
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"
PAD_INDEX, UNK_INDEX = 0, 1

BASELINE_TRAIN_CONFIG = TrainConfig(learning_rate=1e-3)

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")
_SENTENCE_RE = re.compile(r"(?<=[.!?])\s+")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def split_sentences(text: str) -> list[str]:
    parts = [s for s in _SENTENCE_RE.split(text.strip()) if tokenize(s)]
    return parts or [text]


@dataclass(frozen=True)
class Vocab:
    itos: tuple[str, ...]
    min_freq: int = 1
    stoi: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.itos[:2] != (PAD_TOKEN, UNK_TOKEN):
            raise ValueError("vocabulary must start with <pad>, <unk>")
        stoi = {tok: i for i, tok in enumerate(self.itos)}
        if len(stoi) != len(self.itos):
            raise ValueError("duplicate tokens in vocabulary")
        object.__setattr__(self, "stoi", stoi)

    def __len__(self):
        return len(self.itos)

    def encode(self, tokens) -> list[int]:
        return [self.stoi.get(t, UNK_INDEX) for t in tokens]

    def save(self, path) -> None:
        lines = [f"{tok}\t{i}" for i, tok in enumerate(self.itos)]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path, min_freq: int = 1) -> "Vocab":
        itos = {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            tok, idx = line.rsplit("\t", 1)
            itos[int(idx)] = tok
        if sorted(itos) != list(range(len(itos))):
            raise ValueError(f"{path}: vocabulary indices are not contiguous")
        return cls(tuple(itos[i] for i in range(len(itos))), min_freq)


def build_vocab(split: DatasetSplit, min_freq: int = 1) -> Vocab:
    """Tokens seen at least ``min_freq`` times, by descending count then lexicographically."""
    if not len(split):
        raise ValueError("cannot build a vocabulary from an empty split")
    counts = Counter(tok for post in split.posts for tok in tokenize(post.text))
    kept = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
    return Vocab((PAD_TOKEN, UNK_TOKEN, *kept), min_freq)


@dataclass(frozen=True)
class BaselineConfig:
    kind: str
    embedding_dim: int = 300
    hidden_units: int = 128
    filters: int | None = None
    filter_sizes: tuple[int, ...] | None = None
    dropout: float = 0.3
    max_seq_len: int = 128
    attention_channels: int = 3
    max_sentences: int = 8

    @classmethod
    def for_kind(cls, kind: str, **overrides) -> "BaselineConfig":
        defaults = {
            "cnn1d": {"filters": 256, "filter_sizes": (1, 2, 3, 4, 5, 6)},
            "amcnn": {"filters": 128, "filter_sizes": (2, 3, 4)},
        }.get(kind, {})
        return cls(kind=kind, **{**defaults, **overrides}).validate()

    def validate(self) -> "BaselineConfig":
        if self.kind not in KINDS:
            raise ValueError(f"unknown baseline kind {self.kind!r}; expected one of {KINDS}")
        uses_conv = self.kind in CONV_KINDS
        has_filters = self.filters is not None or self.filter_sizes is not None
        if uses_conv and (not self.filters or not self.filter_sizes or min(self.filter_sizes) < 1):
            raise ValueError(f"{self.kind} requires filters and filter_sizes")
        if not uses_conv and has_filters:
            raise ValueError(f"{self.kind} has no convolutions; filters/filter_sizes must be unset")
        if min(self.embedding_dim, self.hidden_units, self.max_seq_len, self.attention_channels) < 1:
            raise ValueError("dimensions must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        return self


def masked_softmax(scores: torch.Tensor, mask: torch.Tensor, dim: int = -1) -> torch.Tensor:
    scores = scores.masked_fill(mask == 0, float("-inf"))
    return torch.softmax(scores, dim=dim).masked_fill(mask == 0, 0.0)


class AdditiveAttention(nn.Module):
    """score_t = v . tanh(W h_t + b), softmax over unmasked steps."""

    def __init__(self, dim: int, attn_dim: int | None = None):
        super().__init__()
        self.proj = nn.Linear(dim, attn_dim or dim)
        self.v = nn.Linear(attn_dim or dim, 1, bias=False)

    def forward(self, h, mask):
        weights = masked_softmax(self.v(torch.tanh(self.proj(h))).squeeze(-1), mask)
        return (weights.unsqueeze(-1) * h).sum(1), weights


class BiRecurrent(nn.Module):
    def __init__(self, input_dim: int, hidden: int, cell=nn.LSTM):
        super().__init__()
        self.rnn = cell(input_dim, hidden, batch_first=True, bidirectional=True)

    def forward(self, x, lengths):
        packed = pack_padded_sequence(x, lengths.clamp_min(1).cpu(), batch_first=True, enforce_sorted=False)
        out, _ = self.rnn(packed)
        out, _ = pad_packed_sequence(out, batch_first=True, total_length=x.shape[1])
        return out


def _mask(lengths, width):
    return (torch.arange(width).unsqueeze(0) < lengths.unsqueeze(1)).long()


class BiLstmAttention(nn.Module):
    def __init__(self, vocab_size, cfg: BaselineConfig):
        super().__init__()
        self.embedding = nn.Embedding(vocab_size, cfg.embedding_dim, padding_idx=PAD_INDEX)
        self.encoder = BiRecurrent(cfg.embedding_dim, cfg.hidden_units)
        self.attention = AdditiveAttention(2 * cfg.hidden_units)
        self.dropout = nn.Dropout(cfg.dropout)
        self.out = nn.Linear(2 * cfg.hidden_units, 2)

    def attend(self, ids, lengths):
        h = self.encoder(self.embedding(ids), lengths)
        return self.attention(h, _mask(lengths, ids.shape[1]))

    def forward(self, ids, lengths):
        context, _ = self.attend(ids, lengths)
        return self.out(self.dropout(context))


def _valid_windows(lengths, width, kernel):
    # window j is valid when it lies inside the real tokens; a post shorter
    # than the kernel keeps only the window starting at 0
    span = torch.maximum(lengths, torch.full_like(lengths, kernel))
    starts = torch.arange(width - kernel + 1).unsqueeze(0)
    return starts + kernel <= span.unsqueeze(1)


class Cnn1d(nn.Module):
    def __init__(self, vocab_size, cfg: BaselineConfig):
        super().__init__()
        self.embedding = nn.Embedding(vocab_size, cfg.embedding_dim, padding_idx=PAD_INDEX)
        self.convs = nn.ModuleList(nn.Conv1d(cfg.embedding_dim, cfg.filters, k) for k in cfg.filter_sizes)
        self.dropout = nn.Dropout(cfg.dropout)
        self.out = nn.Linear(cfg.filters * len(cfg.filter_sizes), 2)

    def pooled(self, ids, lengths):
        x = self.embedding(ids).transpose(1, 2)
        feats = []
        for conv in self.convs:
            c = F.relu(conv(x))
            valid = _valid_windows(lengths, ids.shape[1], conv.kernel_size[0])
            feats.append(c.masked_fill(~valid.unsqueeze(1), float("-inf")).max(dim=2).values)
        return torch.cat(feats, dim=1)

    def forward(self, ids, lengths):
        return self.out(self.dropout(self.pooled(ids, lengths)))


class Rcnn(nn.Module):
    """Recurrent context around each word embedding, tanh projection, max-pool over time."""

    def __init__(self, vocab_size, cfg: BaselineConfig):
        super().__init__()
        self.embedding = nn.Embedding(vocab_size, cfg.embedding_dim, padding_idx=PAD_INDEX)
        self.encoder = BiRecurrent(cfg.embedding_dim, cfg.hidden_units)
        self.proj = nn.Linear(2 * cfg.hidden_units + cfg.embedding_dim, cfg.hidden_units)
        self.dropout = nn.Dropout(cfg.dropout)
        self.out = nn.Linear(cfg.hidden_units, 2)
        self.hidden = cfg.hidden_units

    def forward(self, ids, lengths):
        e = self.embedding(ids)
        h = self.encoder(e, lengths)
        left, right = h[..., :self.hidden], h[..., self.hidden:]
        y = torch.tanh(self.proj(torch.cat([left, e, right], dim=-1)))
        mask = _mask(lengths.clamp_min(1), ids.shape[1]).unsqueeze(-1)
        pooled = y.masked_fill(mask == 0, float("-inf")).max(dim=1).values
        return self.out(self.dropout(pooled))


class Amcnn(nn.Module):
    """BiLSTM states re-weighted by several attention channels, then a 2-D CNN across channels."""

    def __init__(self, vocab_size, cfg: BaselineConfig):
        super().__init__()
        self.embedding = nn.Embedding(vocab_size, cfg.embedding_dim, padding_idx=PAD_INDEX)
        self.encoder = BiRecurrent(cfg.embedding_dim, cfg.hidden_units)
        dim = 2 * cfg.hidden_units
        self.channels = nn.ModuleList(AdditiveAttention(dim, cfg.hidden_units) for _ in range(cfg.attention_channels))
        self.convs = nn.ModuleList(nn.Conv2d(cfg.attention_channels, cfg.filters, (k, dim)) for k in cfg.filter_sizes)
        self.dropout = nn.Dropout(cfg.dropout)
        self.out = nn.Linear(cfg.filters * len(cfg.filter_sizes), 2)

    def forward(self, ids, lengths):
        h = self.encoder(self.embedding(ids), lengths)
        mask = _mask(lengths, ids.shape[1])
        # scale by length so a uniform attention leaves the states unchanged
        scale = lengths.clamp_min(1).to(h.dtype).view(-1, 1, 1)
        stacked = torch.stack([att(h, mask)[1].unsqueeze(-1) * h * scale for att in self.channels], dim=1)
        feats = []
        for conv in self.convs:
            c = F.relu(conv(stacked)).squeeze(-1)
            valid = _valid_windows(lengths, ids.shape[1], conv.kernel_size[0])
            feats.append(c.masked_fill(~valid.unsqueeze(1), float("-inf")).max(dim=2).values)
        return self.out(self.dropout(torch.cat(feats, dim=1)))


class Han(nn.Module):
    """Word-level then sentence-level BiGRU encoders, each followed by attention."""

    def __init__(self, vocab_size, cfg: BaselineConfig):
        super().__init__()
        self.embedding = nn.Embedding(vocab_size, cfg.embedding_dim, padding_idx=PAD_INDEX)
        self.word_encoder = BiRecurrent(cfg.embedding_dim, cfg.hidden_units, nn.GRU)
        self.word_attention = AdditiveAttention(2 * cfg.hidden_units)
        self.sentence_encoder = BiRecurrent(2 * cfg.hidden_units, cfg.hidden_units, nn.GRU)
        self.sentence_attention = AdditiveAttention(2 * cfg.hidden_units)
        self.dropout = nn.Dropout(cfg.dropout)
        self.out = nn.Linear(2 * cfg.hidden_units, 2)

    def forward(self, ids, word_lengths, sentence_lengths):
        b, s, w = ids.shape
        flat_ids = ids.view(b * s, w)
        flat_len = word_lengths.view(b * s)
        h = self.word_encoder(self.embedding(flat_ids), flat_len)
        sent_vecs, _ = self.word_attention(h, _mask(flat_len.clamp_min(1), w))
        sent_vecs = sent_vecs.view(b, s, -1)
        hs = self.sentence_encoder(sent_vecs, sentence_lengths)
        doc, _ = self.sentence_attention(hs, _mask(sentence_lengths, s))
        return self.out(self.dropout(doc))


ARCHITECTURES = {"bilstm_attn": BiLstmAttention, "cnn1d": Cnn1d, "han": Han, "rcnn": Rcnn, "amcnn": Amcnn}


class BaselineModel(nn.Module):
    def __init__(self, cfg: BaselineConfig, vocab: Vocab, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.vocab = vocab
        self.seed = seed
        self.kind = cfg.kind
        self.min_len = max(cfg.filter_sizes) if cfg.filter_sizes else 1
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.net = ARCHITECTURES[cfg.kind](len(vocab), cfg)

    def forward(self, **batch):
        return self.net(**batch)

    def _ids(self, text: str) -> list[int]:
        return self.vocab.encode(tokenize(text)[: self.cfg.max_seq_len]) or [UNK_INDEX]

    def collate(self, posts) -> dict:
        if self.kind == "han":
            return self._collate_han(posts)
        seqs = [self._ids(p.text) for p in posts]
        width = max(self.min_len, max(len(s) for s in seqs))
        ids = torch.full((len(seqs), width), PAD_INDEX, dtype=torch.long)
        for i, s in enumerate(seqs):
            ids[i, :len(s)] = torch.tensor(s)
        return {"ids": ids, "lengths": torch.tensor([len(s) for s in seqs])}

    def _collate_han(self, posts) -> dict:
        docs = [[self._ids(s) for s in split_sentences(p.text)][: self.cfg.max_sentences] for p in posts]
        n_sent = max(len(d) for d in docs)
        n_word = max(len(s) for d in docs for s in d)
        ids = torch.full((len(docs), n_sent, n_word), PAD_INDEX, dtype=torch.long)
        word_len = torch.zeros((len(docs), n_sent), dtype=torch.long)
        for i, d in enumerate(docs):
            for j, s in enumerate(d):
                ids[i, j, :len(s)] = torch.tensor(s)
                word_len[i, j] = len(s)
        return {"ids": ids, "word_lengths": word_len, "sentence_lengths": torch.tensor([len(d) for d in docs])}

    def save(self, directory) -> Path:
        directory = Path(directory)
        tensors = {k: v.detach().double().numpy() for k, v in self.state_dict().items()}
        cfg = asdict(self.cfg)
        manifest = {"kind": "baseline", "config": cfg, "seed": self.seed, "vocab_file": "vocab.txt",
                    "embedding": "net.embedding.weight"}
        write_tensors(directory, tensors, manifest)
        self.vocab.save(directory / "vocab.txt")
        return directory


def build_baseline(cfg: BaselineConfig, vocab: Vocab, seed: int = 0) -> BaselineModel:
    return BaselineModel(cfg.validate(), vocab, seed)


def load_baseline(directory) -> BaselineModel:
    directory = Path(directory)
    tensors, doc = read_tensors(directory)
    cfg = doc["config"]
    if cfg.get("filter_sizes") is not None:
        cfg["filter_sizes"] = tuple(cfg["filter_sizes"])
    model = BaselineModel(BaselineConfig(**cfg), Vocab.load(directory / doc["vocab_file"]), doc["seed"])
    state = model.state_dict()
    model.load_state_dict({k: torch.from_numpy(v).to(state[k].dtype) for k, v in tensors.items()})
    model.eval()
    return model


def train_baseline(model: BaselineModel, train: DatasetSplit, val: DatasetSplit,
                   cfg: TrainConfig = BASELINE_TRAIN_CONFIG, name: str | None = None):
    """Same contract as backbone fine-tuning; returns ``(model, history)``."""
    history = training.fit(model, model.collate, train, val, cfg, name or model.kind)
    return model, history


def predict_baseline(model: BaselineModel, posts, name: str | None = None, batch_size: int = 64):
    return training.predict_records(model, model.collate, list(posts), name or model.kind, batch_size)


@torch.no_grad()
def attention_weights(model: BaselineModel, posts) -> list[np.ndarray]:
    """Per-post attention over unpadded time steps (``bilstm_attn`` only)."""
    if model.kind != "bilstm_attn":
        raise ValueError("attention weights are exposed for bilstm_attn only")
    model.eval()
    batch = model.collate(list(posts))
    _, weights = model.net.attend(batch["ids"], batch["lengths"])
    return [weights[i, :n].numpy().astype(np.float64) for i, n in enumerate(batch["lengths"].tolist())]

