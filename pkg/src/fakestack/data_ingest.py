"""Loading, validation, preprocessing and partitioning of labeled posts."""

from __future__ import annotations

import csv
import io
import logging
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Mapping

import numpy as np

from .core import Label
from .errors import IntegrityError, LabelValueError, SchemaError

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("id", "tweet", "label")
SPLIT_NAMES = ("train", "validation", "test", "external", "custom")
EMPTY_PLACEHOLDER = "<empty>"


@dataclass(frozen=True)
class LabeledPost:
    id: str
    text: str
    label: Label

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError(f"post {self.id!r} has empty text")


@dataclass(frozen=True)
class DatasetSplit:
    name: str
    posts: tuple[LabeledPost, ...]
    metadata: Mapping = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.name not in SPLIT_NAMES:
            raise ValueError(f"unknown split name {self.name!r}")
        object.__setattr__(self, "posts", tuple(self.posts))
        seen = set()
        for post in self.posts:
            if post.id in seen:
                raise IntegrityError(f"duplicate post id {post.id!r} in split {self.name!r}", key=post.id)
            seen.add(post.id)

    def __len__(self):
        return len(self.posts)

    def __iter__(self):
        return iter(self.posts)

    @property
    def ids(self) -> list[str]:
        return [p.id for p in self.posts]

    @property
    def labels(self) -> np.ndarray:
        return np.array([int(p.label) for p in self.posts], dtype=np.int64)

    @property
    def texts(self) -> list[str]:
        return [p.text for p in self.posts]


@dataclass(frozen=True)
class SplitStats:
    n_total: int
    n_real: int
    n_fake: int
    avg_words: float


@dataclass(frozen=True)
class PreprocessOptions:
    lowercase: bool = False
    strip_urls: bool = False
    strip_user_mentions: bool = False
    collapse_whitespace: bool = False

    @property
    def is_identity(self) -> bool:
        return not (self.lowercase or self.strip_urls or self.strip_user_mentions or self.collapse_whitespace)


def _detect_delimiter(path: Path, format_hint: str) -> str:
    if format_hint == "csv":
        return ","
    if format_hint == "tsv":
        return "\t"
    if format_hint != "auto":
        raise ValueError(f"unknown format hint {format_hint!r}")
    if path.suffix.lower() in (".tsv", ".tab"):
        return "\t"
    with open(path, encoding="utf-8-sig", newline="") as fh:
        header = fh.readline()
    return "\t" if header.count("\t") > header.count(",") else ","


def load_split(path, format_hint: str = "auto", name: str = "custom") -> DatasetSplit:
    """Read an ``id,tweet,label`` file (RFC-4180 quoting) into a split.

    Row order is preserved. Column names and label values are matched
    case-insensitively after trimming.
    """
    path = Path(path)
    delimiter = _detect_delimiter(path, format_hint)
    with open(path, encoding="utf-8-sig", newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: file has no header row") from None
        columns = [h.strip().lower() for h in header]
        missing = [c for c in REQUIRED_COLUMNS if c not in columns]
        extra = [c for c in columns if c not in REQUIRED_COLUMNS]
        if missing or extra or len(columns) != len(set(columns)):
            raise SchemaError(
                f"{path}: expected columns {list(REQUIRED_COLUMNS)}, got {header} "
                f"(missing={missing}, extra={extra})"
            )
        idx = {c: columns.index(c) for c in REQUIRED_COLUMNS}
        posts = []
        seen = set()
        # row numbers count the header as row 1
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(columns):
                raise SchemaError(f"{path}: row {row_no} has {len(row)} fields, expected {len(columns)}")
            post_id = row[idx["id"]].strip()
            raw_label = row[idx["label"]]
            try:
                label = Label.parse(raw_label)
            except ValueError:
                raise LabelValueError(
                    f"{path}: row {row_no}: unknown label value {raw_label!r}", row=row_no, value=raw_label
                ) from None
            text = row[idx["tweet"]]
            if not text.strip():
                raise LabelValueError(f"{path}: row {row_no}: empty tweet text", row=row_no)
            if post_id in seen:
                raise IntegrityError(f"{path}: duplicate id {post_id!r} at row {row_no}", key=post_id)
            seen.add(post_id)
            posts.append(LabeledPost(post_id, text, label))
    return DatasetSplit(name, tuple(posts), {"source": str(path)})


def write_split(split: DatasetSplit, path, delimiter: str = ",") -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        writer.writerow(REQUIRED_COLUMNS)
        for post in split.posts:
            writer.writerow([post.id, post.text, str(post.label)])


def count_words(text: str) -> int:
    return len(text.split())


def compute_stats(split: DatasetSplit) -> SplitStats:
    n_real = sum(1 for p in split.posts if p.label is Label.REAL)
    n_total = len(split.posts)
    avg = sum(count_words(p.text) for p in split.posts) / n_total if n_total else 0.0
    return SplitStats(n_total=n_total, n_real=n_real, n_fake=n_total - n_real, avg_words=avg)


def _normalize_verdict(value: str) -> str:
    return " ".join(value.strip().lower().split())


def load_verdict_mapping(path=None) -> dict[str, Label]:
    """Read a ``verdict,binary_label`` file; defaults to the bundled mapping."""
    if path is None:
        text = resources.files("fakestack.data").joinpath("verdict_mapping.csv").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or [f.strip().lower() for f in reader.fieldnames] != ["verdict", "binary_label"]:
        raise SchemaError(f"verdict mapping must have header verdict,binary_label (got {reader.fieldnames})")
    return {_normalize_verdict(row["verdict"]): Label.parse(row["binary_label"]) for row in reader}


def adapt_fakecovid(
    path,
    title_column: str = "title",
    label_column: str = "class",
    id_column: str | None = None,
    mapping: Mapping[str, Label] | None = None,
) -> DatasetSplit:
    """Turn a FakeCovid export into an ``external`` split of title-as-text posts.

    Records without a title are skipped and counted in
    ``metadata["skipped_empty_title"]``. Any verdict missing from the mapping
    aborts the load with every unmapped value listed.
    """
    mapping = load_verdict_mapping() if mapping is None else {_normalize_verdict(k): Label.parse(v) for k, v in mapping.items()}
    with open(path, encoding="utf-8-sig", newline="") as fh:
        reader = csv.DictReader(fh)
        fields = {f.strip().lower(): f for f in (reader.fieldnames or [])}
        for col in (title_column, label_column) + ((id_column,) if id_column else ()):
            if col.lower() not in fields:
                raise SchemaError(f"{path}: FakeCovid file lacks column {col!r} (has {reader.fieldnames})")
        title_key = fields[title_column.lower()]
        label_key = fields[label_column.lower()]
        id_key = fields[id_column.lower()] if id_column else None
        posts, unmapped, skipped = [], {}, 0
        for n, row in enumerate(reader):
            title = row.get(title_key) or ""
            if not title.strip():
                skipped += 1
                continue
            verdict = _normalize_verdict(row.get(label_key) or "")
            label = mapping.get(verdict)
            if label is None:
                unmapped.setdefault(verdict, n + 2)
                continue
            post_id = row[id_key].strip() if id_key else str(n)
            posts.append(LabeledPost(post_id, title, label))
    if unmapped:
        listing = ", ".join(f"{v!r} (first at row {r})" for v, r in sorted(unmapped.items()))
        raise LabelValueError(f"{path}: unmapped FakeCovid verdict labels: {listing}", value=sorted(unmapped))
    if skipped:
        logger.warning("FakeCovid: skipped %d records with empty title", skipped)
    return DatasetSplit("external", tuple(posts), {"source": str(path), "skipped_empty_title": skipped})


_URL_RE = re.compile(r"(?<!\S)(?:https?://|www\.)\S*\s*", re.IGNORECASE)
_MENTION_RE = re.compile(r"(?<!\S)@\w\S*\s*")
_WS_RE = re.compile(r"\s+")


def _remove(pattern: re.Pattern, text: str) -> str:
    out, n = pattern.subn("", text)
    return out.strip() if n else out


def preprocess_text(raw: str, opts: PreprocessOptions = PreprocessOptions()) -> str:
    if opts.is_identity:
        return raw
    text = raw
    if opts.lowercase:
        text = text.lower()
    if opts.strip_urls:
        text = _remove(_URL_RE, text)
    if opts.strip_user_mentions:
        text = _remove(_MENTION_RE, text)
    if opts.collapse_whitespace:
        text = _WS_RE.sub(" ", text).strip()
    if raw.strip() and not text.strip():
        return EMPTY_PLACEHOLDER
    return text


def preprocess_split(split: DatasetSplit, opts: PreprocessOptions) -> DatasetSplit:
    if opts.is_identity:
        return split
    posts = tuple(replace(p, text=preprocess_text(p.text, opts)) for p in split.posts)
    return DatasetSplit(split.name, posts, dict(split.metadata))


def merge_splits(a: DatasetSplit, b: DatasetSplit, namespace: str = "ext") -> DatasetSplit:
    """Concatenate ``a`` then ``b``.

    When any id of ``b`` collides with ``a``, every id of ``b`` is prefixed
    with ``namespace:`` so the merged ids stay unique.
    """
    a_ids = set(a.ids)
    posts_b = b.posts
    if any(p.id in a_ids for p in posts_b):
        posts_b = tuple(replace(p, id=f"{namespace}:{p.id}") for p in posts_b)
        clash = next((p.id for p in posts_b if p.id in a_ids), None)
        if clash is not None:
            raise IntegrityError(f"namespaced id {clash!r} still collides", key=clash)
    meta = {"merged_from": [a.metadata.get("source", a.name), b.metadata.get("source", b.name)]}
    return DatasetSplit(a.name, a.posts + tuple(posts_b), meta)


def kfold_partition(split: DatasetSplit, k: int, seed: int) -> list[tuple[DatasetSplit, DatasetSplit]]:
    """Stratified k-fold partition.

    Each class is shuffled with ``seed`` and the classes are dealt
    round-robin into folds as one continuous sequence, so fold sizes differ
    by at most one and so do per-fold class counts. Posts inside each part
    keep their load order.
    """
    n = len(split)
    if not isinstance(k, (int, np.integer)) or k < 2 or k > n:
        raise ValueError(f"k must satisfy 2 <= k <= {n}, got {k!r}")
    rng = np.random.default_rng(seed)
    labels = split.labels
    fold_of = np.empty(n, dtype=np.int64)
    cursor = 0
    for cls in (Label.FAKE, Label.REAL):
        members = np.flatnonzero(labels == int(cls))
        members = members[rng.permutation(len(members))]
        fold_of[members] = (cursor + np.arange(len(members))) % k
        cursor += len(members)
    parts = []
    for fold in range(k):
        hold = fold_of == fold
        train_posts = tuple(p for p, h in zip(split.posts, hold) if not h)
        hold_posts = tuple(p for p, h in zip(split.posts, hold) if h)
        meta = {"fold": fold, "k": k, "seed": seed}
        parts.append((DatasetSplit("custom", train_posts, meta), DatasetSplit("custom", hold_posts, meta)))
    return parts

