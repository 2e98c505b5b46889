"""Layer regression detector.

An MLP regressor learns, on clean data only, to predict the model's feature
vector (the post-activation output of the last hidden dense layer) from
sliced early-layer activations. Samples whose prediction error exceeds a
percentile threshold of clean errors are flagged as adversarial.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import read_container, split_blob, write_container
from .data import Dataset
from .digest import fnv1a64_hex
from .errors import CalibrationError, CheckpointError, ConfigError, DataError, TapError
from .nn import ModelGraph, collect_layers
from .optim import Adam
from .rng import Rng
from .tensor import Tape, Tensor, add_bias, backward, matmul, mse_loss, relu


@dataclass(frozen=True)
class TapSpec:
    """One tapped layer and its (start, end, step) slice per non-batch axis.

    Axes without a slice are taken whole.
    """

    layer: str
    slices: tuple = ()

    def to_dict(self) -> dict:
        return {"layer": self.layer, "slices": [list(s) for s in self.slices]}

    @classmethod
    def from_dict(cls, d: dict) -> "TapSpec":
        return cls(d["layer"], tuple(tuple(int(v) for v in s) for s in d.get("slices", ())))

    def index(self, shape: tuple) -> tuple:
        """Slice objects for a per-sample activation ``shape``."""
        if len(self.slices) > len(shape):
            raise TapError(f"tap {self.layer!r}: {len(self.slices)} slices for a {len(shape)}-d activation")
        idx = []
        for axis, dim in enumerate(shape):
            if axis >= len(self.slices):
                idx.append(slice(0, dim, 1))
                continue
            start, end, step = self.slices[axis]
            if not (0 <= start < end <= dim) or step < 1:
                raise TapError(f"tap {self.layer!r}: slice {(start, end, step)} out of range for axis {axis} of size {dim}")
            idx.append(slice(start, end, step))
        return tuple(idx)

    def size(self, shape: tuple) -> int:
        return int(np.prod([len(range(s.start, s.stop, s.step)) for s in self.index(shape)]))


def desk_tap_configs() -> list[tuple[str, list[TapSpec]]]:
    """Layer-choice ablation on the desk model.

    Single-layer entries reuse the slice a layer has in the mixture; layers
    outside the mixture are taken whole. ``fc1-only`` is the pre-activation
    input of the feature layer.
    """
    first, second = desk_taps()
    return [
        ("first-layer-only", [first]),
        ("early-mixture", [first, second]),
        ("last-hidden-only", [TapSpec("relu3")]),
        ("fc1-only", [TapSpec("fc1")]),
    ]


def desk_taps() -> list[TapSpec]:
    """Conv blocks 1 and 2 (post-relu): first 4 channels, centered half-size window."""
    return [
        TapSpec("relu1", ((0, 4, 1), (7, 21, 1), (7, 21, 1))),
        TapSpec("relu2", ((0, 4, 1), (3, 10, 1), (3, 10, 1))),
    ]


@dataclass
class DetectorConfig:
    taps: list = field(default_factory=desk_taps)
    hidden: tuple = (256, 256)
    lr: float = 3e-4
    epochs: int = 60
    batch: int = 32
    theta: float = 95.0
    seed: int = 0

    def validate(self, m: ModelGraph) -> None:
        if not self.taps:
            raise ConfigError("detector needs at least one tap")
        if len(self.hidden) != 2 or min(self.hidden) < 1:
            raise ConfigError(f"exactly two positive hidden sizes required, got {self.hidden}")
        if not 0 < self.theta < 100:
            raise ConfigError(f"theta must lie in (0, 100), got {self.theta}")
        if self.epochs < 0 or self.batch < 1 or self.lr < 0:
            raise ConfigError("epochs >= 0, batch >= 1 and lr >= 0 required")
        for tap in self.taps:
            try:
                i = m.layer_index(tap.layer)
            except KeyError:
                raise TapError(f"tap {tap.layer!r}: no such layer") from None
            if i >= m.feature_index:
                raise ConfigError(f"tap {tap.layer!r} is not earlier than feature layer {m.feature_layer!r}")
            tap.index(m.out_shapes[i])


def v_dim(m: ModelGraph, taps) -> int:
    return sum(t.size(m.out_shapes[m.layer_index(t.layer)]) for t in taps)


def extract_v(activations, taps) -> np.ndarray:
    """Slice each tapped activation, flatten per sample, concatenate in tap order.

    ``activations`` maps layer names to batched arrays (or Tensors).
    """
    parts = []
    for tap in taps:
        try:
            a = activations[tap.layer]
        except KeyError:
            raise TapError(f"tap {tap.layer!r}: layer not present in activations") from None
        a = a.data if isinstance(a, Tensor) else np.asarray(a)
        sub = a[(slice(None),) + tap.index(a.shape[1:])]
        parts.append(sub.reshape(len(a), -1))
    return np.ascontiguousarray(np.concatenate(parts, axis=1))


@dataclass
class Regressor:
    params: list
    taps: list
    feature_layer: str
    input_dim: int
    output_dim: int
    hidden: tuple
    meta: dict = field(default_factory=dict)

    def forward(self, v) -> Tensor:
        w1, b1, w2, b2, w3, b3 = self.params
        h = relu(add_bias(matmul(v, w1), b1))
        h = relu(add_bias(matmul(h, w2), b2))
        return add_bias(matmul(h, w3), b3)

    def predict(self, v: np.ndarray) -> np.ndarray:
        return self.forward(Tensor(v)).data

    def copy(self) -> "Regressor":
        return Regressor([Tensor(p.data.copy()) for p in self.params], list(self.taps), self.feature_layer,
                         self.input_dim, self.output_dim, tuple(self.hidden), dict(self.meta))


def init_regressor(m: ModelGraph, config: DetectorConfig) -> Regressor:
    config.validate(m)
    din = v_dim(m, config.taps)
    dout = int(np.prod(m.out_shapes[m.feature_index]))
    rng = Rng(config.seed).derive("regressor-init")
    sizes = [din, *config.hidden, dout]
    params = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / a)
        params.append(Tensor(rng.uniform(-limit, limit, (a, b)), dtype=np.float32))
        params.append(Tensor(np.zeros(b, dtype=np.float32)))
    return Regressor(params, list(config.taps), m.feature_layer, din, dout, tuple(config.hidden))


def regression_data(m: ModelGraph, x: np.ndarray, taps, batch: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """(v, feature vector) pairs for a batch of inputs."""
    names = list(dict.fromkeys([t.layer for t in taps] + [m.feature_layer]))
    acts = collect_layers(m, x, names, batch)
    target = acts[m.feature_layer].reshape(len(x), -1)
    return extract_v(acts, taps), target


@dataclass
class RegressorHistory:
    loss: list[float] = field(default_factory=list)


def train_regressor(m: ModelGraph, clean: Dataset, config: DetectorConfig) -> tuple[Regressor, RegressorHistory]:
    """Fit the regressor by Adam on mean squared error, clean samples only."""
    if clean.is_adversarial:
        raise DataError("detector training accepts clean data only; got adversarial provenance")
    if len(clean) == 0:
        raise DataError("empty detector training set")
    reg = init_regressor(m, config)
    hist = RegressorHistory()
    if config.epochs == 0:
        return reg, hist
    v, target = regression_data(m, clean.images, config.taps)
    if v.shape[1] != reg.input_dim or target.shape[1] != reg.output_dim:
        raise ConfigError(f"regressor dims ({reg.input_dim}, {reg.output_dim}) vs data {v.shape[1]}, {target.shape[1]}")
    for p in reg.params:
        p.requires_grad = True
    opt = Adam(reg.params, lr=config.lr)
    rng = Rng(config.seed).derive("regressor-shuffle")
    n = len(v)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch):
            idx = order[start:start + config.batch]
            with Tape() as tape:
                loss = mse_loss(reg.forward(Tensor(v[idx])), target[idx])
            backward(tape, loss)
            opt.step()
            total += loss.item() * len(idx)
        hist.loss.append(total / n)
    for p in reg.params:
        p.requires_grad = False
        p.grad = None
    reg.meta.update(epochs=config.epochs, lr=config.lr, batch=config.batch, seed=config.seed,
                    train_samples=n, final_loss=hist.loss[-1])
    return reg, hist


def score_from_activations(reg: Regressor, activations, taps=None) -> np.ndarray:
    taps = reg.taps if taps is None else taps
    feat = activations[reg.feature_layer]
    feat = feat.data if isinstance(feat, Tensor) else np.asarray(feat)
    pred = reg.predict(extract_v(activations, taps)).astype(np.float64)
    diff = pred - feat.reshape(len(feat), -1)
    return np.mean(diff * diff, axis=1)


def score(m: ModelGraph, reg: Regressor, taps, x: np.ndarray, batch: int = 256) -> np.ndarray:
    """Per-sample mean squared error between regressor output and feature vector."""
    taps = reg.taps if taps is None else taps
    names = list(dict.fromkeys([t.layer for t in taps] + [reg.feature_layer]))
    x = np.asarray(x, dtype=np.float32)
    out = [score_from_activations(reg, collect_layers(m, x[i:i + batch], names, batch), taps)
           for i in range(0, len(x), batch)]
    return np.concatenate(out)


# ----------------------------------------------------------------- threshold


@dataclass(frozen=True)
class Threshold:
    h: float
    theta: float
    k: int
    digest: str

    def to_dict(self) -> dict:
        return {"h": self.h, "theta": self.theta, "k": self.k, "calibration_fnv1a64": self.digest}


MIN_CALIBRATION = 20


def calibrate_threshold(scores, theta: float) -> Threshold:
    """h = beta[floor(K * theta / 100)] with beta sorted ascending and 1-indexed.

    An index of 0 is read as the smallest score.
    """
    beta = np.sort(np.asarray(scores, dtype=np.float64))
    k = len(beta)
    if k < MIN_CALIBRATION:
        raise CalibrationError(f"need at least {MIN_CALIBRATION} calibration scores, got {k}")
    if not 0 < theta < 100:
        raise CalibrationError(f"theta must lie in (0, 100), got {theta}")
    pos = int(np.floor(k * theta / 100.0))
    h = float(beta[max(pos, 1) - 1])
    return Threshold(h, float(theta), k, fnv1a64_hex(beta.astype("<f8").tobytes()))


class Verdict(str, enum.Enum):
    CLEAN = "clean"
    ADVERSARIAL = "adversarial"


def detect(loss: float, threshold: Threshold | float) -> Verdict:
    h = threshold.h if isinstance(threshold, Threshold) else float(threshold)
    return Verdict.ADVERSARIAL if loss > h else Verdict.CLEAN


def detect_batch(losses, threshold: Threshold | float) -> np.ndarray:
    """Boolean mask, True where flagged adversarial."""
    h = threshold.h if isinstance(threshold, Threshold) else float(threshold)
    return np.asarray(losses) > h


# ----------------------------------------------------------------- persistence


def save_detector(reg: Regressor, path, threshold: Threshold | None = None, theta: float | None = None):
    header = {
        "kind": "detector",
        "taps": [t.to_dict() for t in reg.taps],
        "feature_layer": reg.feature_layer,
        "input_dim": reg.input_dim,
        "output_dim": reg.output_dim,
        "hidden": list(reg.hidden),
        "params": [list(p.shape) for p in reg.params],
        "param_count": int(sum(p.size for p in reg.params)),
        "theta": threshold.theta if threshold else theta,
        "h": threshold.h if threshold else None,
        "threshold": threshold.to_dict() if threshold else None,
        "meta": reg.meta,
    }
    return write_container(path, header, [p.data for p in reg.params])


def load_detector(path) -> tuple[Regressor, Threshold | None]:
    header, blob = read_container(path)
    if header.get("kind") != "detector":
        raise CheckpointError(f"{path}: holds a {header.get('kind')!r}, not a detector")
    arrays = split_blob(blob, [tuple(s) for s in header["params"]])
    reg = Regressor([Tensor(a) for a in arrays], [TapSpec.from_dict(t) for t in header["taps"]],
                    header["feature_layer"], header["input_dim"], header["output_dim"],
                    tuple(header["hidden"]), dict(header.get("meta", {})))
    th = header.get("threshold")
    threshold = Threshold(th["h"], th["theta"], th["k"], th["calibration_fnv1a64"]) if th else None
    return reg, threshold


def save_threshold(threshold: Threshold, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(threshold.to_dict(), sort_keys=True, indent=1) + "\n")
    return path


def load_threshold(path) -> Threshold:
    d = json.loads(Path(path).read_text())
    return Threshold(d["h"], d["theta"], d["k"], d["calibration_fnv1a64"])
