"""Stacking: meta-feature assembly, out-of-fold member predictions, meta-learners."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import joblib
import numpy as np
from sklearn.ensemble import RandomForestClassifier
from sklearn.svm import SVC

from . import heads
from .backbones.classic import check_two_classes
from .core import Label, PredictionRecord, records_from_array
from .data_ingest import DatasetSplit, kfold_partition
from .errors import CompletenessError, ConfigurationError, CoverageError, IntegrityError, ShapeError, TrainingError
from .heads import MetaNetConfig, NetTrainConfig

logger = logging.getLogger(__name__)

VARIANTS = {
    "v1": ("roberta", "bert", "xlnet", "gpt2"),
    "v2": ("roberta", "bert", "xlnet", "gpt2", "albert", "bart", "deberta"),
    "v3": ("roberta", "bert", "xlnet", "gpt2", "albert", "bart", "deberta", "distilroberta"),
}
META_KINDS = ("neural", "random_forest", "svm")
META_MODES = ("paper", "val", "oof")
META_TRAIN_CONFIG = NetTrainConfig(learning_rate=1e-3, epochs=50, batch_size=32)


@dataclass(frozen=True)
class EnsembleVariant:
    name: str
    members: tuple[str, ...]


def define_variant(name: str, members: Sequence[str] | None = None) -> EnsembleVariant:
    if name == "custom":
        if not members:
            raise ValueError("custom variant needs an explicit member list")
        if len(set(members)) != len(members):
            raise ValueError(f"duplicate members in {list(members)}")
        return EnsembleVariant("custom", tuple(members))
    if name not in VARIANTS:
        raise ValueError(f"unknown ensemble variant {name!r}; expected one of {sorted(VARIANTS)} or 'custom'")
    return EnsembleVariant(name, VARIANTS[name])


@dataclass(frozen=True, eq=False)
class MetaFeatureMatrix:
    """Rows are posts, columns are members; entry ``(i, j)`` is member j's p_real on post i."""

    values: np.ndarray
    member_order: tuple[str, ...]
    post_ids: tuple[str, ...]
    labels: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).reshape(len(self.post_ids), len(self.member_order))
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "member_order", tuple(self.member_order))
        object.__setattr__(self, "post_ids", tuple(self.post_ids))
        if len(set(self.member_order)) != len(self.member_order):
            raise IntegrityError(f"duplicate member names in {self.member_order}")
        if not np.all(np.isfinite(values)) or values.min(initial=0.0) < 0.0 or values.max(initial=0.0) > 1.0:
            raise ValueError("meta-feature values must lie in [0, 1]")
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (len(self.post_ids),):
                raise ShapeError(f"{labels.shape[0]} labels for {len(self.post_ids)} rows")
            object.__setattr__(self, "labels", labels)

    @property
    def shape(self):
        return self.values.shape

    def columns(self, order: Sequence[str]) -> np.ndarray:
        index = [self.member_order.index(m) for m in order]
        return self.values[:, index]

    def equals(self, other: "MetaFeatureMatrix") -> bool:
        same_labels = (self.labels is None and other.labels is None) or (
            self.labels is not None and other.labels is not None and np.array_equal(self.labels, other.labels))
        return (self.member_order == other.member_order and self.post_ids == other.post_ids
                and np.array_equal(self.values, other.values) and same_labels)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            header = ["post_id", *self.member_order] + (["label"] if self.labels is not None else [])
            writer.writerow(header)
            for i, pid in enumerate(self.post_ids):
                row = [pid, *(f"{v:.9f}" for v in self.values[i])]
                if self.labels is not None:
                    row.append(str(Label(int(self.labels[i]))))
                writer.writerow(row)

    @classmethod
    def from_csv(cls, path) -> "MetaFeatureMatrix":
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            has_label = header[-1] == "label"
            members = header[1:-1] if has_label else header[1:]
            ids, rows, labels = [], [], []
            for row in reader:
                ids.append(row[0])
                rows.append([float(v) for v in row[1:1 + len(members)]])
                if has_label:
                    labels.append(int(Label.parse(row[-1])))
        values = np.array(rows, dtype=np.float64).reshape(len(ids), len(members))
        return cls(values, tuple(members), tuple(ids), np.array(labels) if has_label else None)


def build_meta_features(records_by_model: Mapping[str, Sequence[PredictionRecord]], member_order: Sequence[str],
                        gold: DatasetSplit | None = None) -> MetaFeatureMatrix:
    """Stack member ``p_real`` values column-wise, rows in the first member's record order.

    Every member must cover exactly the first member's post ids; a missing
    post is a hard error (there is no imputation).
    """
    member_order = tuple(member_order)
    if not member_order:
        raise ValueError("member_order is empty")
    absent = [m for m in member_order if m not in records_by_model]
    if absent:
        raise ConfigurationError(f"no predictions supplied for members {absent}")
    by_member = {}
    for m in member_order:
        table = {}
        for rec in records_by_model[m]:
            if rec.post_id in table:
                raise IntegrityError(f"member {m!r} has duplicate records for post id {rec.post_id!r}",
                                     key=(m, rec.post_id))
            table[rec.post_id] = rec.probs.p_real
        by_member[m] = table
    post_ids = [rec.post_id for rec in records_by_model[member_order[0]]]
    basis = set(post_ids)
    values = np.empty((len(post_ids), len(member_order)))
    for j, m in enumerate(member_order):
        table = by_member[m]
        for i, pid in enumerate(post_ids):
            if pid not in table:
                raise CompletenessError(m, pid)
            values[i, j] = table[pid]
        extra = [pid for pid in table if pid not in basis]
        if extra:
            raise CompletenessError(m, extra[0], reason="has unexpected")
    labels = None
    if gold is not None:
        gold_labels = {p.id: int(p.label) for p in gold.posts}
        missing = [pid for pid in post_ids if pid not in gold_labels]
        if missing or len(gold_labels) != len(post_ids):
            extra = sorted(set(gold_labels) - basis)
            raise CoverageError(f"gold split does not match prediction ids: missing={missing[:10]} extra={extra[:10]}",
                                missing=missing, extra=extra)
        labels = np.array([gold_labels[pid] for pid in post_ids], dtype=np.int64)
    return MetaFeatureMatrix(np.clip(values, 0.0, 1.0), member_order, tuple(post_ids), labels)


@dataclass(frozen=True)
class MemberSpec:
    """How to train one ensemble member."""

    name: str
    backbone: object  # BackboneId
    head_cfg: heads.MlpHeadConfig = heads.MlpHeadConfig()
    train_cfg: object = None  # training.TrainConfig
    pooling: str | None = None


class MemberTrainingError(TrainingError):
    def __init__(self, member, fold, cause):
        super().__init__(f"member {member!r} fold {fold}: {cause}")
        self.member = member
        self.fold = fold


def _default_fit_member(spec: MemberSpec, train: DatasetSplit, val: DatasetSplit, provider):
    from .backbones import fine_tune
    from .training import TrainConfig

    model, _ = fine_tune(spec.backbone, spec.head_cfg, train, val, spec.train_cfg or TrainConfig(),
                         provider=provider, pooling=spec.pooling, name=spec.name)
    return model


def _default_predict(model, posts):
    from .backbones import predict_batch

    return predict_batch(model, posts)


def generate_oof_predictions(member_specs: Sequence[MemberSpec], train: DatasetSplit, k: int, seed: int,
                             val: DatasetSplit, provider=None, fold_log: list | None = None,
                             fit_member: Callable | None = None, predict: Callable | None = None):
    """Out-of-fold predictions: every train post is scored by a fold-model that never saw it.

    ``val`` drives early stopping of each fold-model. ``fold_log`` (if given)
    receives one ``(member, fold, train_ids, holdout_ids)`` tuple per fold-model.
    Returns ``{member name: records in train order}``.
    """
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    fit_member = fit_member or _default_fit_member
    predict = predict or _default_predict
    folds = kfold_partition(train, k, seed)
    order = {pid: i for i, pid in enumerate(train.ids)}
    out = {}
    for spec in member_specs:
        records = []
        for fold, (fold_train, holdout) in enumerate(folds):
            try:
                model = fit_member(spec, fold_train, val, provider)
                records.extend(predict(model, holdout.posts))
            except Exception as exc:
                raise MemberTrainingError(spec.name, fold, exc) from exc
            if fold_log is not None:
                fold_log.append((spec.name, fold, frozenset(fold_train.ids), frozenset(holdout.ids)))
        records.sort(key=lambda r: order[r.post_id])
        out[spec.name] = records
    return out


@dataclass(eq=False)
class MetaLearner:
    kind: str
    model: object
    member_order: tuple[str, ...]
    history: list = field(default_factory=list)

    @property
    def _canonical(self) -> tuple[str, ...]:
        # training and prediction see columns sorted by member name, so a
        # relabelled member order trains the identical model
        return tuple(sorted(self.member_order))

    def _inputs(self, features: MetaFeatureMatrix) -> np.ndarray:
        if tuple(features.member_order) != self.member_order:
            raise ConfigurationError(
                f"meta-feature member order {list(features.member_order)} differs from the "
                f"meta-learner's training order {list(self.member_order)}")
        return features.columns(self._canonical)

    def predict_proba(self, features: MetaFeatureMatrix) -> np.ndarray:
        x = self._inputs(features)
        if self.kind == "neural":
            return heads.predict_proba(self.model, x)
        proba = self.model.predict_proba(x)
        out = np.zeros((len(x), 2))
        out[:, self.model.classes_] = proba
        return out

    def predict_records(self, features: MetaFeatureMatrix, variant: str = "custom") -> list[PredictionRecord]:
        return records_from_array(features.post_ids, f"ensemble:{variant}", self.predict_proba(features))

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        doc = {"kind": self.kind, "member_order": list(self.member_order), "history": self.history}
        if self.kind == "neural":
            heads.save_params(self.model, directory / "network")
        else:
            joblib.dump(self.model, directory / "estimator.joblib")
        (directory / "meta_learner.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return directory

    @classmethod
    def load(cls, directory) -> "MetaLearner":
        directory = Path(directory)
        doc = json.loads((directory / "meta_learner.json").read_text(encoding="utf-8"))
        if doc["kind"] == "neural":
            model = heads.load_params(directory / "network")
        else:
            model = joblib.load(directory / "estimator.joblib")
        return cls(doc["kind"], model, tuple(doc["member_order"]), doc.get("history", []))


def train_meta(features: MetaFeatureMatrix, kind: str = "neural", cfg: MetaNetConfig | None = None,
               train_cfg: NetTrainConfig | None = None, seed: int = 0) -> MetaLearner:
    """Fit the stacking meta-learner on a labelled meta-feature matrix."""
    if kind not in META_KINDS:
        raise ValueError(f"unknown meta-learner kind {kind!r}; expected one of {META_KINDS}")
    if features.labels is None:
        raise ValueError("meta-feature matrix has no labels")
    y = check_two_classes(features.labels)
    learner = MetaLearner(kind, None, tuple(features.member_order))
    x = features.columns(learner._canonical)
    if kind == "neural":
        params = heads.build_meta_net(cfg or MetaNetConfig(), x.shape[1], seed)
        tcfg = train_cfg or replace(META_TRAIN_CONFIG, seed=seed)
        learner.model, learner.history = heads.train_network(params, x, y, tcfg)
    elif kind == "random_forest":
        learner.model = RandomForestClassifier(n_estimators=100, random_state=seed).fit(x, y)
    else:
        learner.model = SVC(kernel="rbf", probability=True, random_state=seed).fit(x, y)
    return learner


def ensemble_predict(members, meta: MetaLearner, posts, variant: str = "custom") -> list[PredictionRecord]:
    """Run every member, stack their outputs and apply the meta-learner."""
    from .backbones import predict_batch

    names = tuple(m.name for m in members)
    if names != meta.member_order:
        raise ConfigurationError(
            f"member order {list(names)} does not match meta-learner order {list(meta.member_order)}")
    posts = list(posts)
    records = {m.name: predict_batch(m, posts) for m in members}
    matrix = build_meta_features(records, names)
    return meta.predict_records(matrix, variant)
