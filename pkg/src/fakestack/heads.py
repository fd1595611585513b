"""Feed-forward classification head and stacking meta-network in numpy.

Both networks are small fixed chains of dense layers, so the backward pass
is written by hand and verified against central finite differences with
:func:`grad_check`. Everything runs in float64.

Layer convention: ``z = x @ W + b`` with ``W`` of shape ``(in, out)``, then
optional normalization, then the activation, then (training only) inverted
dropout.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import ClassProbabilities, Label
from .errors import NonFiniteLossError, ShapeError

ACTIVATIONS = ("identity", "tanh", "relu", "softmax")
NORMALIZATIONS = ("layer_norm", "batch_norm")
NORM_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass(frozen=True)
class MlpHeadConfig:
    hidden_units: int = 64
    dropout_rate: float = 0.1
    normalization: str = "layer_norm"
    output_classes: int = 2

    def validate(self):
        if not isinstance(self.hidden_units, int) or self.hidden_units < 1:
            raise ValueError(f"hidden_units must be >= 1, got {self.hidden_units!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate!r}")
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"normalization must be one of {NORMALIZATIONS}, got {self.normalization!r}")
        if self.output_classes != 2:
            raise ValueError("output_classes is fixed at 2")
        return self


@dataclass(frozen=True)
class MetaNetConfig:
    layer1_units: int = 64
    layer2_units: int = 128
    output_classes: int = 2

    def validate(self):
        for name in ("layer1_units", "layer2_units"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ValueError(f"{name} must be >= 1, got {value!r}")
        if self.output_classes != 2:
            raise ValueError("output_classes is fixed at 2")
        return self


@dataclass(frozen=True, eq=False)
class DenseLayer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "identity"
    norm: str | None = None
    gamma: np.ndarray | None = None
    beta: np.ndarray | None = None
    running_mean: np.ndarray | None = None
    running_var: np.ndarray | None = None
    dropout: float = 0.0

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]

    def tensors(self) -> dict[str, np.ndarray]:
        """Trainable tensors by name."""
        out = {"weight": self.weight, "bias": self.bias}
        if self.norm is not None:
            out["gamma"] = self.gamma
            out["beta"] = self.beta
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        if self.norm == "batch_norm":
            return {"running_mean": self.running_mean, "running_var": self.running_var}
        return {}


@dataclass(frozen=True, eq=False)
class NetworkParams:
    layers: tuple[DenseLayer, ...]
    seed: int
    kind: str = "custom"
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        for i, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if a.out_dim != b.in_dim:
                raise ShapeError(f"layer {i} outputs {a.out_dim} features but layer {i + 1} expects {b.in_dim}")
        for name, arr in self.named_arrays():
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite entries in {name}")

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    def named_tensors(self):
        for i, layer in enumerate(self.layers):
            for name, arr in layer.tensors().items():
                yield f"{i}.{name}", arr

    def named_arrays(self):
        """Trainable tensors followed by non-trainable buffers."""
        yield from self.named_tensors()
        for i, layer in enumerate(self.layers):
            for name, arr in layer.buffers().items():
                yield f"{i}.{name}", arr

    def n_parameters(self) -> int:
        return sum(arr.size for _, arr in self.named_tensors())

    def copy(self) -> "NetworkParams":
        layers = []
        for layer in self.layers:
            kw = {k: (None if v is None else np.array(v, dtype=np.float64, copy=True))
                  for k, v in {**layer.tensors(), **layer.buffers()}.items()}
            layers.append(replace(layer, **kw))
        return replace(self, layers=tuple(layers), config=dict(self.config))

    def equals(self, other: "NetworkParams") -> bool:
        mine, theirs = dict(self.named_arrays()), dict(other.named_arrays())
        return mine.keys() == theirs.keys() and all(np.array_equal(mine[k], theirs[k]) for k in mine)


def _layer_seeds(seed: int, n: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n, dtype=np.uint32)]


def init_xavier(fan_in: int, fan_out: int, seed) -> np.ndarray:
    """Glorot-uniform matrix of shape ``(fan_in, fan_out)``."""
    if fan_in < 1 or fan_out < 1:
        raise ValueError(f"fan_in and fan_out must be >= 1, got ({fan_in}, {fan_out})")
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    rng = np.random.default_rng(seed)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def _dense(fan_in, fan_out, seed, **kw) -> DenseLayer:
    return DenseLayer(init_xavier(fan_in, fan_out, seed), np.zeros(fan_out), **kw)


def build_mlp_head(cfg: MlpHeadConfig, input_dim: int, seed: int) -> NetworkParams:
    """dense -> norm -> dense+tanh -> dropout -> dense -> softmax."""
    cfg.validate()
    if input_dim < 1:
        raise ValueError(f"input_dim must be >= 1, got {input_dim}")
    h = cfg.hidden_units
    s = _layer_seeds(seed, 3)
    norm_kw = {"norm": cfg.normalization, "gamma": np.ones(h), "beta": np.zeros(h)}
    if cfg.normalization == "batch_norm":
        norm_kw.update(running_mean=np.zeros(h), running_var=np.ones(h))
    layers = (
        _dense(input_dim, h, s[0], activation="identity", **norm_kw),
        _dense(h, h, s[1], activation="tanh", dropout=cfg.dropout_rate),
        _dense(h, cfg.output_classes, s[2], activation="softmax"),
    )
    return NetworkParams(layers, seed, "mlp_head", {"input_dim": input_dim, **asdict(cfg)})


def build_meta_net(cfg: MetaNetConfig, input_dim: int, seed: int) -> NetworkParams:
    """dense+tanh -> dense+relu -> dense -> softmax."""
    cfg.validate()
    if input_dim < 1:
        raise ValueError(f"input_dim must be >= 1, got {input_dim}")
    s = _layer_seeds(seed, 3)
    layers = (
        _dense(input_dim, cfg.layer1_units, s[0], activation="tanh"),
        _dense(cfg.layer1_units, cfg.layer2_units, s[1], activation="relu"),
        _dense(cfg.layer2_units, cfg.output_classes, s[2], activation="softmax"),
    )
    return NetworkParams(layers, seed, "meta_net", {"input_dim": input_dim, **asdict(cfg)})


def softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _as_matrix(params: NetworkParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        got = x.shape[1] if x.ndim == 2 else x.shape
        raise ShapeError(f"expected input width {params.input_dim}, got {got}")
    return x


def _forward(params, x, training=False, rng=None, bn_stats=None):
    """Returns ``(logits, cache)``; the last layer's softmax is left to the caller."""
    cache = []
    a = x
    for i, layer in enumerate(params.layers):
        entry = {"x": a}
        z = a @ layer.weight + layer.bias
        if layer.norm == "layer_norm":
            mu = z.mean(axis=1, keepdims=True)
            var = z.var(axis=1, keepdims=True)
            inv = 1.0 / np.sqrt(var + NORM_EPS)
            xhat = (z - mu) * inv
            entry.update(xhat=xhat, inv=inv)
            z = layer.gamma * xhat + layer.beta
        elif layer.norm == "batch_norm":
            if training:
                mu = z.mean(axis=0)
                var = z.var(axis=0)
                if bn_stats is not None:
                    n = z.shape[0]
                    unbiased = var * n / (n - 1) if n > 1 else var
                    bn_stats[i] = (mu, unbiased)
            else:
                mu, var = layer.running_mean, layer.running_var
            inv = 1.0 / np.sqrt(var + NORM_EPS)
            xhat = (z - mu) * inv
            entry.update(xhat=xhat, inv=inv, bn_training=training)
            z = layer.gamma * xhat + layer.beta
        if layer.activation == "tanh":
            a = np.tanh(z)
        elif layer.activation == "relu":
            a = np.maximum(z, 0.0)
        else:
            a = z
        entry["z"] = z
        entry["a"] = a
        if training and layer.dropout > 0.0 and layer.activation != "softmax":
            keep = 1.0 - layer.dropout
            mask = (rng.random(a.shape) < keep) / keep
            entry["mask"] = mask
            a = a * mask
        cache.append(entry)
    return a, cache


def _proba(params, x, training=False, rng=None) -> np.ndarray:
    logits, _ = _forward(params, x, training=training, rng=rng)
    return softmax(logits)


def predict_proba(params: NetworkParams, features, training: bool = False, rng=None) -> np.ndarray:
    """``(N, 2)`` array of ``(p_fake, p_real)``; dropout only when ``training``."""
    x = _as_matrix(params, features)
    if training and rng is None:
        rng = np.random.default_rng(params.seed)
    return _proba(params, x, training=training, rng=rng)


def _to_probs(proba: np.ndarray) -> list[ClassProbabilities]:
    return [ClassProbabilities(float(r[0]), float(r[1])) for r in proba]


def head_forward(params: NetworkParams, features, training: bool = False, rng=None) -> list[ClassProbabilities]:
    return _to_probs(predict_proba(params, features, training=training, rng=rng))


def meta_forward(params: NetworkParams, meta_features) -> list[ClassProbabilities]:
    return _to_probs(predict_proba(params, meta_features, training=False))


def _loss(logits, y) -> float:
    return float(-_log_softmax(logits)[np.arange(len(y)), y].mean())


def _backward(params, cache, logits, y):
    n = len(y)
    delta = softmax(logits)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads = [None] * len(params.layers)
    for i in range(len(params.layers) - 1, -1, -1):
        layer, entry = params.layers[i], cache[i]
        g = {}
        if i < len(params.layers) - 1 or layer.activation != "softmax":
            # delta currently holds dL/d(output of layer i)
            if "mask" in entry:
                delta = delta * entry["mask"]
            if layer.activation == "tanh":
                delta = delta * (1.0 - entry["a"] ** 2)
            elif layer.activation == "relu":
                delta = delta * (entry["z"] > 0)
        if layer.norm is not None:
            xhat, inv = entry["xhat"], entry["inv"]
            g["gamma"] = (delta * xhat).sum(axis=0)
            g["beta"] = delta.sum(axis=0)
            dxhat = delta * layer.gamma
            if layer.norm == "layer_norm":
                delta = inv * (dxhat - dxhat.mean(axis=1, keepdims=True)
                               - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
            elif entry["bn_training"]:
                delta = inv * (dxhat - dxhat.mean(axis=0) - xhat * (dxhat * xhat).mean(axis=0))
            else:
                delta = dxhat * inv
        g["weight"] = entry["x"].T @ delta
        g["bias"] = delta.sum(axis=0)
        grads[i] = g
        delta = delta @ layer.weight.T
    return grads


def loss_and_grads(params: NetworkParams, inputs, labels, training=False, rng=None):
    """Mean cross-entropy and its gradient for every trainable tensor."""
    x = _as_matrix(params, inputs)
    y = np.asarray([int(v) for v in np.atleast_1d(labels)], dtype=np.int64)
    logits, cache = _forward(params, x, training=training, rng=rng)
    return _loss(logits, y), _backward(params, cache, logits, y)


def grad_check(params: NetworkParams, input, label, epsilon: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Runs in evaluation mode. Where both gradients are below 1e-8 in magnitude
    the absolute difference is used instead of the relative one.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    x = _as_matrix(params, input)
    y = np.array([int(label)])
    work = params.copy()
    _, grads = loss_and_grads(work, x, y)
    worst = 0.0
    for i, layer in enumerate(work.layers):
        for name, arr in layer.tensors().items():
            analytic = grads[i][name]
            flat = arr.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + epsilon
                plus = _loss(_forward(work, x)[0], y)
                flat[j] = orig - epsilon
                minus = _loss(_forward(work, x)[0], y)
                flat[j] = orig
                numeric = (plus - minus) / (2.0 * epsilon)
                a = analytic.reshape(-1)[j]
                denom = max(abs(a), abs(numeric))
                err = abs(a - numeric) if denom < 1e-8 else abs(a - numeric) / denom
                worst = max(worst, err)
    return worst


@dataclass(frozen=True)
class NetTrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0
    optimizer: str = "adamw"
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    def validate(self):
        if self.optimizer not in ("adamw", "sgd"):
            raise ValueError(f"optimizer must be 'adamw' or 'sgd', got {self.optimizer!r}")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("learning_rate > 0, batch_size >= 1 and epochs >= 0 required")
        return self


def train_network(params: NetworkParams, inputs, labels: Sequence, train_cfg: NetTrainConfig = NetTrainConfig()):
    """Mini-batch cross-entropy training; returns ``(new_params, history)``.

    ``history`` holds one dict per epoch with the mean batch loss and the
    accuracy of the updated network on the full training inputs. The input
    parameters are never modified.
    """
    train_cfg.validate()
    x = _as_matrix(params, inputs)
    y = np.asarray([int(v) for v in labels], dtype=np.int64)
    if len(y) != len(x):
        raise ShapeError(f"{len(x)} inputs but {len(y)} labels")
    if not np.all(np.isfinite(x)):
        raise ValueError("inputs contain non-finite values")
    work = params.copy()
    history = []
    if train_cfg.epochs == 0:
        return work, history

    rng = np.random.default_rng(train_cfg.seed)
    b1, b2 = train_cfg.betas
    moments = {name: (np.zeros_like(arr), np.zeros_like(arr)) for name, arr in work.named_tensors()}
    step = 0
    for epoch in range(train_cfg.epochs):
        order = rng.permutation(len(x))
        losses = []
        for batch_no, start in enumerate(range(0, len(x), train_cfg.batch_size)):
            idx = order[start:start + train_cfg.batch_size]
            bn_stats = {}
            logits, cache = _forward(work, x[idx], training=True, rng=rng, bn_stats=bn_stats)
            loss = _loss(logits, y[idx])
            if not math.isfinite(loss):
                raise NonFiniteLossError(epoch, batch_no, loss)
            grads = _backward(work, cache, logits, y[idx])
            losses.append(loss)
            step += 1
            for i, layer in enumerate(work.layers):
                for name, arr in layer.tensors().items():
                    g = grads[i][name]
                    if train_cfg.optimizer == "sgd":
                        arr -= train_cfg.learning_rate * g
                        continue
                    m, v = moments[f"{i}.{name}"]
                    if name == "weight" and train_cfg.weight_decay:
                        arr *= 1.0 - train_cfg.learning_rate * train_cfg.weight_decay
                    m *= b1
                    m += (1 - b1) * g
                    v *= b2
                    v += (1 - b2) * g * g
                    m_hat = m / (1 - b1 ** step)
                    v_hat = v / (1 - b2 ** step)
                    arr -= train_cfg.learning_rate * m_hat / (np.sqrt(v_hat) + train_cfg.eps)
                if i in bn_stats:
                    mu, var = bn_stats[i]
                    layer.running_mean[:] = (1 - BN_MOMENTUM) * layer.running_mean + BN_MOMENTUM * mu
                    layer.running_var[:] = (1 - BN_MOMENTUM) * layer.running_var + BN_MOMENTUM * var
        proba = _proba(work, x)
        acc = float(np.mean(np.where(proba[:, 1] > proba[:, 0], 1, 0) == y))
        history.append({"epoch": epoch + 1, "loss": float(np.mean(losses)), "accuracy": acc})
    return work, history


def predict_labels(proba: np.ndarray) -> np.ndarray:
    """Argmax over ``(p_fake, p_real)`` with exact ties going to FAKE."""
    return np.where(proba[:, 1] > proba[:, 0], int(Label.REAL), int(Label.FAKE))


# -- checkpoint container -----------------------------------------------------
# A directory holding manifest.json plus one raw little-endian float64 file
# per tensor. Baseline checkpoints reuse write_tensors/read_tensors.

CONTAINER_FORMAT = "fakestack-tensors"
CONTAINER_VERSION = 1


def write_tensors(directory, tensors: dict[str, np.ndarray], manifest: dict) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = {}
    for name, arr in tensors.items():
        fname = f"{name}.f64"
        data = np.ascontiguousarray(arr, dtype="<f8")
        (directory / fname).write_bytes(data.tobytes())
        index[name] = {"file": fname, "shape": list(arr.shape)}
    doc = {"format": CONTAINER_FORMAT, "version": CONTAINER_VERSION, **manifest, "tensors": index}
    (directory / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return directory


def read_tensors(directory) -> tuple[dict[str, np.ndarray], dict]:
    directory = Path(directory)
    doc = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    if doc.get("format") != CONTAINER_FORMAT:
        raise ValueError(f"{directory}: not a {CONTAINER_FORMAT} container")
    tensors = {}
    for name, info in doc["tensors"].items():
        raw = np.frombuffer((directory / info["file"]).read_bytes(), dtype="<f8")
        tensors[name] = raw.reshape(info["shape"]).astype(np.float64)
    return tensors, doc


def save_params(params: NetworkParams, directory) -> Path:
    layers = [{"activation": l.activation, "norm": l.norm, "dropout": l.dropout} for l in params.layers]
    manifest = {"kind": params.kind, "seed": params.seed, "config": params.config, "layers": layers}
    return write_tensors(directory, dict(params.named_arrays()), manifest)


def load_params(directory) -> NetworkParams:
    tensors, doc = read_tensors(directory)
    layers = []
    for i, spec in enumerate(doc["layers"]):
        kw = {k: tensors.get(f"{i}.{k}") for k in ("gamma", "beta", "running_mean", "running_var")}
        layers.append(DenseLayer(tensors[f"{i}.weight"], tensors[f"{i}.bias"], spec["activation"],
                                 spec["norm"], dropout=spec["dropout"], **kw))
    return NetworkParams(tuple(layers), doc["seed"], doc["kind"], doc["config"])
