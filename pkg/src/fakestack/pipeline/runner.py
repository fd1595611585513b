"""Resumable experiment orchestration.

Stages communicate only through files under ``runs/<run-id>/``. Each stage
has a key, the hash of its settings and of its upstream stage keys. A stage
whose key matches the manifest and whose artifacts all exist is reported as
``cached`` and not rerun.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import torch

from .. import __version__
from ..backbones import BackboneId, fine_tune, load_trained_model, make_provider, predict_batch
from ..data_ingest import (
    DatasetSplit,
    adapt_fakecovid,
    compute_stats,
    load_split,
    load_verdict_mapping,
    merge_splits,
    preprocess_split,
    write_split,
)
from ..ensemble import MemberSpec, MetaFeatureMatrix, build_meta_features, generate_oof_predictions, train_meta
from ..errors import FakeStackError, TrainingError
from ..heads import MetaNetConfig, NetTrainConfig
from ..metrics import evaluate, parse_report, render_report, render_table
from .cache import cache_predictions, load_predictions, prediction_path
from .config import ExperimentConfig

logger = logging.getLogger(__name__)

DONE, CACHED, FAILED, SKIPPED, PENDING = "done", "cached", "failed", "skipped", "pending"
TERMINAL = (DONE, CACHED, FAILED, SKIPPED)
EVAL_SPLITS = ("validation", "test")
MANIFEST_NAME = "manifest.json"


def _digest(obj) -> str:
    text = json.dumps(obj, sort_keys=True, default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path: Path, doc) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    tmp.replace(path)


@dataclass
class StageRecord:
    name: str
    status: str = PENDING
    key: str = ""
    wall_time: float = 0.0
    artifacts: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)


@dataclass
class RunManifest:
    run_id: str
    run_dir: Path
    config: dict = field(default_factory=dict)
    version: str = __version__
    stages: dict = field(default_factory=dict)
    members: dict = field(default_factory=dict)

    @property
    def path(self) -> Path:
        return self.run_dir / MANIFEST_NAME

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "version": self.version,
            "config": self.config,
            "stages": {k: dataclasses.asdict(v) for k, v in self.stages.items()},
            "members": self.members,
        }

    def save(self) -> Path:
        self.run_dir.mkdir(parents=True, exist_ok=True)
        _write_json(self.path, self.to_dict())
        return self.path

    @classmethod
    def load(cls, run_dir) -> "RunManifest":
        run_dir = Path(run_dir)
        doc = json.loads((run_dir / MANIFEST_NAME).read_text(encoding="utf-8"))
        stages = {k: StageRecord(**v) for k, v in doc.get("stages", {}).items()}
        return cls(doc["run_id"], run_dir, doc.get("config", {}), doc.get("version", ""), stages,
                   doc.get("members", {}))

    def artifacts_exist(self, record: StageRecord) -> bool:
        return all((self.run_dir / a).exists() for a in record.artifacts)

    def missing_artifacts(self) -> list[str]:
        """Artifacts named by finished stages that are absent on disk."""
        return [a for r in self.stages.values() if r.status in (DONE, CACHED)
                for a in r.artifacts if not (self.run_dir / a).exists()]

    def statuses(self) -> dict:
        return {k: v.status for k, v in self.stages.items()}


class StageFailure(FakeStackError):
    """A stage raised; the manifest already records the diagnostics."""

    def __init__(self, stage: str, cause: BaseException, manifest: RunManifest):
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
        self.manifest = manifest
        self.exit_code = root_exit_code(cause)


def root_exit_code(exc: BaseException) -> int:
    """Exit code of the innermost package error in the cause chain (training failure otherwise)."""
    code = TrainingError.exit_code
    seen = set()
    while exc is not None and id(exc) not in seen:
        seen.add(id(exc))
        if isinstance(exc, FakeStackError):
            code = exc.exit_code
        exc = exc.__cause__
    return code


def qualify_ids(split: DatasetSplit, prefix: str) -> DatasetSplit:
    """Prefix ids with the split name; the official splits reuse the same integer ids."""
    posts = tuple(dataclasses.replace(p, id=f"{prefix}:{p.id}") for p in split.posts)
    return DatasetSplit(split.name, posts, dict(split.metadata))


class ExperimentRunner:
    def __init__(self, cfg: ExperimentConfig, resume: bool = True, provider=None):
        self.cfg = cfg
        self.resume = resume
        self.run_dir = Path(cfg.run_dir)
        self._lock = threading.Lock()
        self._provider = provider
        self._splits: dict[str, DatasetSplit] = {}
        previous = None
        if resume and (self.run_dir / MANIFEST_NAME).exists():
            previous = RunManifest.load(self.run_dir)
        self.previous = previous.stages if previous else {}
        self.manifest = RunManifest(cfg.run_name, self.run_dir, cfg.echo(),
                                    members=dict(previous.members) if previous else {})
        torch.set_num_threads(cfg.threads)

    # -- plumbing ------------------------------------------------------

    @property
    def provider(self):
        if self._provider is None:
            bb = self.cfg.backbones
            options = {}
            if bb.provider == "random-init":
                options = dict(hidden_size=bb.hidden_size, num_layers=bb.num_layers, vocab_size=bb.vocab_size,
                               max_positions=max(256, self.cfg.train.max_seq_len + 4), seed=self.cfg.seed)
            self._provider = make_provider(bb.provider, offline=bb.offline, cache_dir=bb.cache_dir, **options)
        return self._provider

    def _stage(self, name: str, inputs: dict, artifacts: list[str], fn: Callable[[], dict | None]) -> StageRecord:
        key = _digest(inputs)
        with self._lock:
            done = self.manifest.stages.get(name)
            if done is not None and done.key == key and done.status in (DONE, CACHED):
                return done
            prev = self.previous.get(name)
            if (prev is not None and prev.key == key and prev.status in (DONE, CACHED)
                    and all((self.run_dir / a).exists() for a in artifacts)):
                record = StageRecord(name, CACHED, key, prev.wall_time, list(artifacts), prev.diagnostics)
                self.manifest.stages[name] = record
                self.manifest.save()
                logger.info("stage %s: cached", name)
                return record
            self.manifest.stages[name] = StageRecord(name, PENDING, key, artifacts=list(artifacts))
        logger.info("stage %s: running", name)
        start = time.perf_counter()
        try:
            diagnostics = fn() or {}
        except Exception as exc:
            record = StageRecord(name, FAILED, key, time.perf_counter() - start, list(artifacts), {
                "error": type(exc).__name__,
                "message": str(exc),
                "exit_code": root_exit_code(exc),
            })
            with self._lock:
                self.manifest.stages[name] = record
                self.manifest.save()
            logger.error("stage %s failed: %s", name, exc)
            raise StageFailure(name, exc, self.manifest) from exc
        record = StageRecord(name, DONE, key, time.perf_counter() - start, list(artifacts), diagnostics)
        missing = [a for a in artifacts if not (self.run_dir / a).exists()]
        if missing:
            raise RuntimeError(f"stage {name} did not produce {missing}")
        with self._lock:
            self.manifest.stages[name] = record
            self.manifest.save()
        return record

    def split(self, name: str) -> DatasetSplit:
        if name not in self._splits:
            self._splits[name] = load_split(self.run_dir / "data" / f"{name}.csv", name=name)
        return self._splits[name]

    # -- stages --------------------------------------------------------

    def prepare_data(self) -> StageRecord:
        d = self.cfg.data
        files = {"train": d.train, "validation": d.validation, "test": d.test}
        if d.external is not None:
            files["external"] = d.external
        if d.fakecovid.mapping is not None:
            files["mapping"] = d.fakecovid.mapping
        inputs = {
            "files": {k: file_digest(p) for k, p in files.items()},
            "data": {k: v for k, v in self.cfg.echo()["data"].items() if k not in files},
            "fakecovid": dataclasses.asdict(d.fakecovid) | {"mapping": None},
            "preprocess": dataclasses.asdict(self.cfg.preprocess),
        }
        artifacts = [f"data/{s}.csv" for s in ("train", "validation", "test")] + ["data/stats.json"]

        def run():
            out = self.run_dir / "data"
            out.mkdir(parents=True, exist_ok=True)
            splits = {name: qualify_ids(load_split(files[name], d.format, name), name)
                      for name in ("train", "validation", "test")}
            stats = {}
            if d.external is not None:
                mapping = load_verdict_mapping(d.fakecovid.mapping) if d.fakecovid.mapping else None
                ext = adapt_fakecovid(d.external, d.fakecovid.title_column, d.fakecovid.label_column,
                                      d.fakecovid.id_column, mapping)
                ext = qualify_ids(ext, "external")
                stats["external"] = dataclasses.asdict(compute_stats(ext))
                stats["external"]["skipped_empty_title"] = ext.metadata.get("skipped_empty_title", 0)
                splits["train"] = merge_splits(splits["train"], ext, d.namespace)
            for name, split in splits.items():
                split = preprocess_split(split, self.cfg.preprocess)
                stats[name] = dataclasses.asdict(compute_stats(split))
                write_split(split, out / f"{name}.csv")
            logger.info("training split: %d posts (validation %d, test %d)", stats["train"]["n_total"],
                        stats["validation"]["n_total"], stats["test"]["n_total"])
            _write_json(out / "stats.json", stats)
            self._splits.clear()
            return {"train_size": stats["train"]["n_total"]}

        return self._stage("prepare", inputs, artifacts, run)

    def _member_spec(self, member: str) -> MemberSpec:
        return MemberSpec(member, BackboneId(member, self.cfg.backbones.size_class), self.cfg.head,
                          self.cfg.train_config_for(member), self.cfg.backbones.pooling)

    def _member_inputs(self, member: str) -> dict:
        echo = self.cfg.echo()
        spec = self._member_spec(member)
        return {
            "member": member,
            "train": dataclasses.asdict(spec.train_cfg),
            "head": dataclasses.asdict(spec.head_cfg),
            "backbones": echo["backbones"] | {"offline": None, "cache_dir": None},
            "seed": self.cfg.seed,
        }

    def _checkpoint_dir(self, member: str) -> Path:
        return self.run_dir / "checkpoints" / member

    def train_member(self, member: str) -> StageRecord:
        self._check_member(member)
        prep = self.prepare_data()
        inputs = {"prepare": prep.key, **self._member_inputs(member)}
        artifacts = [f"checkpoints/{member}/manifest.json"]

        def run():
            spec = self._member_spec(member)
            model, history = fine_tune(spec.backbone, spec.head_cfg, self.split("train"), self.split("validation"),
                                       spec.train_cfg, provider=self.provider, pooling=spec.pooling, name=member)
            target = self._checkpoint_dir(member)
            target.mkdir(parents=True, exist_ok=True)
            model.save(target)
            with self._lock:
                self.manifest.members[member] = model.fingerprint
            best = max((h["val_accuracy"] for h in history), default=None)
            return {"fingerprint": model.fingerprint, "epochs_run": len(history), "best_val_accuracy": best}

        return self._stage(f"train:{member}", inputs, artifacts, run)

    def _prediction_artifact(self, model: str, split: str) -> str:
        return str(prediction_path("predictions", model, split))

    def predict_member(self, member: str, split: str) -> StageRecord:
        """Member predictions on a split; on ``train`` in oof mode these are out-of-fold."""
        self._check_member(member)
        if split not in ("train", *EVAL_SPLITS):
            raise ValueError(f"unknown split {split!r}")
        artifact = self._prediction_artifact(member, split)
        oof = split == "train" and self.cfg.meta.mode == "oof"
        if oof:
            prep = self.prepare_data()
            inputs = {"prepare": prep.key, "oof_k": self.cfg.meta.k, **self._member_inputs(member)}

            def run():
                (self.run_dir / "predictions").mkdir(parents=True, exist_ok=True)
                fold_log = []
                out = generate_oof_predictions([self._member_spec(member)], self.split("train"), self.cfg.meta.k,
                                               self.cfg.seed, self.split("validation"), self.provider, fold_log)
                cache_predictions(out[member], self.run_dir / artifact)
                return {"folds": [{"fold": f, "train": len(tr), "holdout": len(ho)} for _, f, tr, ho in fold_log]}
        else:
            trained = self.train_member(member)
            inputs = {"train": trained.key, "split": split}

            def run():
                (self.run_dir / "predictions").mkdir(parents=True, exist_ok=True)
                model = load_trained_model(self._checkpoint_dir(member))
                cache_predictions(predict_batch(model, self.split(split).posts), self.run_dir / artifact)
                return {"n": len(self.split(split))}

        return self._stage(f"predict:{member}:{split}", inputs, [artifact], run)

    def _meta_source_split(self) -> str:
        return "validation" if self.cfg.meta.mode == "val" else "train"

    def _member_chain(self, member: str) -> list[StageRecord]:
        needed = sorted({self._meta_source_split(), *EVAL_SPLITS}, key=("train", "validation", "test").index)
        return [self.predict_member(member, s) for s in needed]

    def run_members(self) -> dict[str, list[StageRecord]]:
        """All member-level stages; up to ``max_parallel_members`` members at once."""
        self.prepare_data()
        workers = min(self.cfg.max_parallel_members, len(self.cfg.members))
        if workers <= 1:
            return {m: self._member_chain(m) for m in self.cfg.members}
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {m: pool.submit(self._member_chain, m) for m in self.cfg.members}
            return {m: f.result() for m, f in futures.items()}

    def _meta_splits(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys((self._meta_source_split(), *EVAL_SPLITS)))

    def build_meta(self) -> StageRecord:
        chains = self.run_members()
        inputs = {"mode": self.cfg.meta.mode, "members": list(self.cfg.members),
                  "predictions": {m: [r.key for r in recs] for m, recs in chains.items()}}
        artifacts = [f"meta/{s}.csv" for s in self._meta_splits()]

        def run():
            (self.run_dir / "meta").mkdir(parents=True, exist_ok=True)
            shapes = {}
            for split in self._meta_splits():
                matrix = self._stack(split)
                matrix.to_csv(self.run_dir / "meta" / f"{split}.csv")
                shapes[split] = list(matrix.shape)
            return {"shapes": shapes}

        return self._stage("build-meta", inputs, artifacts, run)

    def _stack(self, split: str) -> MetaFeatureMatrix:
        records = {m: load_predictions(self.run_dir / self._prediction_artifact(m, split)) for m in self.cfg.members}
        return build_meta_features(records, self.cfg.members, self.split(split))

    @property
    def ensemble_name(self) -> str:
        return f"ensemble:{self.cfg.variant}"

    def train_meta(self) -> StageRecord:
        meta = self.build_meta()
        m = self.cfg.meta
        inputs = {"build": meta.key, "meta": dataclasses.asdict(m), "seed": self.cfg.seed}
        artifacts = ["meta/learner/meta_learner.json"] + [
            self._prediction_artifact(self.ensemble_name, s) for s in EVAL_SPLITS]

        def run():
            source = MetaFeatureMatrix.from_csv(self.run_dir / "meta" / f"{self._meta_source_split()}.csv")
            learner = train_meta(source, m.kind, MetaNetConfig(m.layer1_units, m.layer2_units),
                                 NetTrainConfig(learning_rate=m.learning_rate, epochs=m.epochs,
                                                batch_size=m.batch_size, seed=self.cfg.seed),
                                 seed=self.cfg.seed)
            learner.save(self.run_dir / "meta" / "learner")
            for split in EVAL_SPLITS:
                matrix = MetaFeatureMatrix.from_csv(self.run_dir / "meta" / f"{split}.csv")
                cache_predictions(learner.predict_records(matrix, self.cfg.variant),
                                  self.run_dir / self._prediction_artifact(self.ensemble_name, split))
            return {"kind": m.kind, "train_rows": source.shape[0]}

        return self._stage("train-meta", inputs, artifacts, run)

    def evaluate(self) -> StageRecord:
        meta = self.train_meta()
        member_keys = {name: rec.key for name, rec in self.manifest.stages.items() if name.startswith("predict:")}
        inputs = {"train-meta": meta.key, "predictions": member_keys}
        models = [*self.cfg.members, self.ensemble_name]
        artifacts = ["reports/summary.md"] + [
            str(prediction_path("reports", mdl, s)).replace(".csv", ext)
            for mdl in models for s in EVAL_SPLITS for ext in (".json", ".md")]

        def run():
            out = self.run_dir / "reports"
            out.mkdir(parents=True, exist_ok=True)
            lines = [f"# {self.cfg.run_name}", ""]
            for split in EVAL_SPLITS:
                reports = []
                for mdl in models:
                    preds = load_predictions(self.run_dir / self._prediction_artifact(mdl, split))
                    report = evaluate(preds, self.split(split), model=mdl, split=split)
                    base = prediction_path(out, mdl, split)
                    base.with_suffix(".json").write_text(render_report(report, "json"), encoding="utf-8")
                    base.with_suffix(".md").write_text(render_report(report, "markdown"), encoding="utf-8")
                    reports.append(report)
                lines += [f"## {split}", "", render_table(reports)]
            (out / "summary.md").write_text("\n".join(lines), encoding="utf-8")
            return {}

        return self._stage("evaluate", inputs, artifacts, run)

    def _check_member(self, member: str) -> None:
        if member not in self.cfg.members:
            raise ValueError(f"{member!r} is not a member of this experiment ({', '.join(self.cfg.members)})")

    def finalize(self) -> RunManifest:
        """Give every expected stage a terminal status and persist the manifest."""
        expected = ["prepare"]
        for m in self.cfg.members:
            expected.append(f"train:{m}")
            expected += [f"predict:{m}:{s}" for s in self._meta_splits()]
        expected += ["build-meta", "train-meta", "evaluate"]
        with self._lock:
            for name in expected:
                rec = self.manifest.stages.setdefault(name, StageRecord(name))
                if rec.status not in TERMINAL:
                    rec.status = SKIPPED
            for rec in self.manifest.stages.values():
                if rec.status not in TERMINAL:
                    rec.status = SKIPPED
            self.manifest.save()
        return self.manifest

    def run(self) -> RunManifest:
        try:
            self.evaluate()
        finally:
            self.finalize()
        return self.manifest


def run_experiment(cfg: ExperimentConfig, resume: bool = True, provider=None) -> RunManifest:
    """Run every stage in order; finished stages with unchanged inputs are reused.

    A failing stage is recorded in the manifest with its diagnostics, the
    stages depending on it are marked ``skipped`` and :class:`StageFailure`
    is raised.
    """
    return ExperimentRunner(cfg, resume=resume, provider=provider).run()


def load_reports(run_dir) -> dict:
    out = {}
    for path in sorted((Path(run_dir) / "reports").glob("*.json")):
        report = parse_report(path.read_text(encoding="utf-8"))
        out[(report.model, report.split)] = report
    return out


def compare_runs(run_a, run_b) -> str:
    """Side-by-side accuracy and weighted F1 for the reports of two runs."""
    a, b = load_reports(run_a), load_reports(run_b)
    keys = sorted(set(a) | set(b), key=lambda k: (k[1], k[0]))
    lines = [f"A: {run_a}", f"B: {run_b}", "",
             "| Model | Split | Acc A | Acc B | Δ Acc | wF1 A | wF1 B |",
             "|---|---|---|---|---|---|---|"]

    def cell(rep, attr):
        if rep is None:
            return "n/a"
        return f"{rep.accuracy:.4f}" if attr == "acc" else f"{rep.weighted.f1:.4f}"

    for key in keys:
        ra, rb = a.get(key), b.get(key)
        delta = f"{rb.accuracy - ra.accuracy:+.4f}" if ra and rb else "n/a"
        lines.append(f"| {key[0]} | {key[1]} | {cell(ra, 'acc')} | {cell(rb, 'acc')} | {delta} | "
                     f"{cell(ra, 'f1')} | {cell(rb, 'f1')} |")
    return "\n".join(lines) + "\n"
