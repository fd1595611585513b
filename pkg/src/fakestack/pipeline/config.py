"""Experiment configuration: a YAML file with a strict, documented key schema.

Relative paths are resolved against the directory holding the config file.
Unknown keys are rejected, and every problem found is reported at once.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..backbones.registry import BACKBONE_NAMES, POOLINGS, SIZE_CLASSES
from ..data_ingest import PreprocessOptions
from ..ensemble import META_KINDS, META_MODES, VARIANTS
from ..errors import ConfigError
from ..heads import MlpHeadConfig
from ..training import TrainConfig

PROVIDERS = ("huggingface", "random-init")


@dataclass(frozen=True)
class FakeCovidConfig:
    title_column: str = "title"
    label_column: str = "class"
    id_column: str | None = None
    mapping: Path | None = None


@dataclass(frozen=True)
class DataConfig:
    train: Path
    validation: Path
    test: Path
    external: Path | None = None
    format: str = "auto"
    namespace: str = "ext"
    fakecovid: FakeCovidConfig = FakeCovidConfig()


@dataclass(frozen=True)
class BackboneSettings:
    provider: str = "huggingface"
    size_class: str = "base"
    offline: bool = False
    cache_dir: Path | None = None
    pooling: str | None = None
    hidden_size: int = 32
    num_layers: int = 2
    vocab_size: int = 4096


@dataclass(frozen=True)
class MetaSettings:
    kind: str = "neural"
    mode: str = "oof"
    k: int = 5
    layer1_units: int = 64
    layer2_units: int = 128
    learning_rate: float = 1e-3
    epochs: int = 50
    batch_size: int = 32


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig
    name: str = "experiment"
    seed: int = 42
    output_dir: Path = Path("runs")
    run_id: str | None = None
    variant: str = "v3"
    members: tuple[str, ...] = VARIANTS["v3"]
    preprocess: PreprocessOptions = PreprocessOptions()
    backbones: BackboneSettings = BackboneSettings()
    train: TrainConfig = TrainConfig()
    member_overrides: dict = field(default_factory=dict)
    head: MlpHeadConfig = MlpHeadConfig()
    meta: MetaSettings = MetaSettings()
    max_parallel_members: int = 1
    threads: int = 1
    source: Path | None = None

    @property
    def run_name(self) -> str:
        return self.run_id or self.name

    @property
    def run_dir(self) -> Path:
        return Path(self.output_dir) / self.run_name

    def member_seed(self, member: str) -> int:
        return self.seed + self.members.index(member)

    def train_config_for(self, member: str) -> TrainConfig:
        overrides = dict(self.member_overrides.get(member, {}))
        return dataclasses.replace(self.train, seed=self.member_seed(member), **overrides)

    def with_overrides(self, offline=None, seed=None, out=None, size_class=None) -> "ExperimentConfig":
        cfg = self
        if offline is not None:
            cfg = dataclasses.replace(cfg, backbones=dataclasses.replace(cfg.backbones, offline=offline))
        if size_class is not None:
            if size_class not in SIZE_CLASSES:
                raise ConfigError(f"unknown size class {size_class!r}")
            cfg = dataclasses.replace(cfg, backbones=dataclasses.replace(cfg.backbones, size_class=size_class))
        if seed is not None:
            cfg = dataclasses.replace(cfg, seed=int(seed))
        if out is not None:
            cfg = dataclasses.replace(cfg, output_dir=Path(out))
        return cfg

    def echo(self) -> dict:
        """JSON-safe dump of every setting, used for manifests and stage keys."""
        def conv(v):
            if dataclasses.is_dataclass(v):
                return {f.name: conv(getattr(v, f.name)) for f in dataclasses.fields(v)}
            if isinstance(v, Path):
                return str(v)
            if isinstance(v, (list, tuple)):
                return [conv(x) for x in v]
            if isinstance(v, dict):
                return {str(k): conv(x) for k, x in sorted(v.items())}
            return v

        doc = conv(self)
        doc.pop("source", None)
        return doc


_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)} - {"seed"}


def _take(section: dict, schema: dict, where: str, errors: list) -> dict:
    """Pull known keys out of ``section`` with type checks; collect problems."""
    if section is None:
        return {}
    if not isinstance(section, dict):
        errors.append(f"{where}: expected a mapping, got {type(section).__name__}")
        return {}
    out = {}
    for key, value in section.items():
        if key not in schema:
            errors.append(f"{where}.{key}: unknown key")
            continue
        kinds = schema[key]
        if value is None:
            out[key] = None
            continue
        if kinds is float and isinstance(value, (int, float)) and not isinstance(value, bool):
            value = float(value)
        elif kinds is float and isinstance(value, str):
            try:
                value = float(value)
            except ValueError:
                pass
        if not isinstance(value, kinds) or (kinds is int and isinstance(value, bool)):
            errors.append(f"{where}.{key}: expected {getattr(kinds, '__name__', kinds)}, got {value!r}")
            continue
        out[key] = value
    return out


TOP_KEYS = {
    "name": str, "seed": int, "output_dir": str, "run_id": str, "data": dict, "preprocess": dict,
    "ensemble": dict, "backbones": dict, "train": dict, "member_overrides": dict, "head": dict,
    "meta": dict, "runtime": dict,
}
DATA_KEYS = {"train": str, "validation": str, "test": str, "external": str, "format": str,
             "namespace": str, "fakecovid": dict}
FAKECOVID_KEYS = {"title_column": str, "label_column": str, "id_column": str, "mapping": str}
PREPROCESS_KEYS = {f.name: bool for f in dataclasses.fields(PreprocessOptions)}
ENSEMBLE_KEYS = {"variant": str, "members": list}
BACKBONE_KEYS = {"provider": str, "size_class": str, "offline": bool, "cache_dir": str, "pooling": str,
                 "hidden_size": int, "num_layers": int, "vocab_size": int}
TRAIN_KEYS = {"learning_rate": float, "epochs": int, "batch_size": int, "early_stop_patience": int,
              "max_seq_len": int, "weight_decay": float, "force": bool}
HEAD_KEYS = {"hidden_units": int, "dropout_rate": float, "normalization": str}
META_KEYS = {"kind": str, "mode": str, "k": int, "layer1_units": int, "layer2_units": int,
             "learning_rate": float, "epochs": int, "batch_size": int}
RUNTIME_KEYS = {"max_parallel_members": int, "threads": int}


def parse_config(doc: dict, base_dir: Path = Path("."), check_paths: bool = True,
                 source: Path | None = None) -> ExperimentConfig:
    errors: list[str] = []
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping at the top level")
    top = _take(doc, TOP_KEYS, "config", errors)

    def path(value):
        if value is None:
            return None
        p = Path(value).expanduser()
        return p if p.is_absolute() else (base_dir / p)

    data_doc = _take(top.get("data"), DATA_KEYS, "data", errors)
    fc = _take(data_doc.pop("fakecovid", None), FAKECOVID_KEYS, "data.fakecovid", errors)
    if "mapping" in fc:
        fc["mapping"] = path(fc["mapping"])
    for req in ("train", "validation", "test"):
        if not data_doc.get(req):
            errors.append(f"data.{req}: required")
    data = None
    if all(data_doc.get(r) for r in ("train", "validation", "test")):
        data = DataConfig(
            train=path(data_doc["train"]), validation=path(data_doc["validation"]), test=path(data_doc["test"]),
            external=path(data_doc.get("external")), format=data_doc.get("format", "auto"),
            namespace=data_doc.get("namespace", "ext"), fakecovid=FakeCovidConfig(**fc),
        )
        if data.format not in ("csv", "tsv", "auto"):
            errors.append(f"data.format: must be csv, tsv or auto, got {data.format!r}")
        if check_paths:
            for label, p in (("train", data.train), ("validation", data.validation), ("test", data.test),
                             ("external", data.external), ("fakecovid.mapping", data.fakecovid.mapping)):
                if p is not None and not p.exists():
                    errors.append(f"data.{label}: file not found: {p}")

    preprocess = PreprocessOptions(**_take(top.get("preprocess"), PREPROCESS_KEYS, "preprocess", errors))

    ens = _take(top.get("ensemble"), ENSEMBLE_KEYS, "ensemble", errors)
    variant = ens.get("variant") or ("custom" if ens.get("members") else "v3")
    members = tuple(ens.get("members") or ())
    if variant == "custom":
        if not members:
            errors.append("ensemble.members: required when variant is custom")
    elif variant in VARIANTS:
        if members and tuple(members) != VARIANTS[variant]:
            errors.append(f"ensemble.members: conflicts with variant {variant}")
        members = VARIANTS[variant]
    else:
        errors.append(f"ensemble.variant: unknown variant {variant!r}")
    for m in members:
        if m not in BACKBONE_NAMES:
            errors.append(f"ensemble.members: unknown member {m!r} (expected one of {', '.join(BACKBONE_NAMES)})")
    if len(set(members)) != len(members):
        errors.append("ensemble.members: duplicate members")

    bb = BackboneSettings(**_take(top.get("backbones"), BACKBONE_KEYS, "backbones", errors))
    if bb.provider not in PROVIDERS:
        errors.append(f"backbones.provider: must be one of {PROVIDERS}, got {bb.provider!r}")
    if bb.size_class not in SIZE_CLASSES:
        errors.append(f"backbones.size_class: must be one of {SIZE_CLASSES}, got {bb.size_class!r}")
    if bb.pooling is not None and bb.pooling not in POOLINGS:
        errors.append(f"backbones.pooling: must be one of {POOLINGS}")
    if bb.cache_dir is not None:
        bb = dataclasses.replace(bb, cache_dir=path(bb.cache_dir))

    train = TrainConfig(**_take(top.get("train"), TRAIN_KEYS, "train", errors))
    try:
        train.validate()
    except ValueError as exc:
        errors.append(f"train: {exc}")

    overrides = {}
    for member, section in (top.get("member_overrides") or {}).items():
        if member not in members:
            errors.append(f"member_overrides.{member}: not an ensemble member")
            continue
        overrides[member] = _take(section, TRAIN_KEYS, f"member_overrides.{member}", errors)
        try:
            dataclasses.replace(train, **overrides[member]).validate()
        except (ValueError, TypeError) as exc:
            errors.append(f"member_overrides.{member}: {exc}")

    head = MlpHeadConfig(**_take(top.get("head"), HEAD_KEYS, "head", errors))
    try:
        head.validate()
    except ValueError as exc:
        errors.append(f"head: {exc}")

    meta = MetaSettings(**_take(top.get("meta"), META_KEYS, "meta", errors))
    if meta.kind not in META_KINDS:
        errors.append(f"meta.kind: must be one of {META_KINDS}, got {meta.kind!r}")
    if meta.mode not in META_MODES:
        errors.append(f"meta.mode: must be one of {META_MODES}, got {meta.mode!r}")
    if meta.mode == "oof" and meta.k < 2:
        errors.append(f"meta.k: must be >= 2 in oof mode, got {meta.k}")

    runtime = _take(top.get("runtime"), RUNTIME_KEYS, "runtime", errors)
    if runtime.get("max_parallel_members", 1) < 1 or runtime.get("threads", 1) < 1:
        errors.append("runtime: max_parallel_members and threads must be >= 1")

    if errors:
        raise ConfigError(f"invalid experiment config{f' {source}' if source else ''}:", errors)
    return ExperimentConfig(
        data=data,
        name=top.get("name", "experiment"),
        seed=top.get("seed", 42),
        output_dir=path(top.get("output_dir", "runs")),
        run_id=top.get("run_id"),
        variant=variant,
        members=members,
        preprocess=preprocess,
        backbones=bb,
        train=train,
        member_overrides=overrides,
        head=head,
        meta=meta,
        max_parallel_members=runtime.get("max_parallel_members", 1),
        threads=runtime.get("threads", 1),
        source=source,
    )


def validate_config(path, check_paths: bool = True) -> ExperimentConfig:
    """Parse, default and check a YAML experiment config."""
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(doc or {}, base_dir=path.resolve().parent, check_paths=check_paths, source=path)
