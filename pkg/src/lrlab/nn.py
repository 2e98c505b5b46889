"""Sequential models whose forward pass exposes every layer output."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterator

import numpy as np

from .checkpoint import read_container, split_blob, write_container
from .errors import BuildError, CheckpointError, DataError, InputError
from .optim import Adam
from .rng import Rng
from .tensor import (Tape, Tensor, add_bias, backward, conv2d, conv_output_size, flatten, matmul, relu,
                     softmax_cross_entropy)

KINDS = ("conv3x3", "dense", "relu", "flatten")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    name: str
    size: int = 0
    stride: int = 1
    pad: int = 1


def desk_spec(classes: int = 4) -> list[LayerSpec]:
    """conv8s1 -> relu -> conv16s2 -> relu -> conv32s2 -> relu -> flatten -> dense64 -> relu -> head."""
    return [
        LayerSpec("conv3x3", "conv1", 8, 1, 1),
        LayerSpec("relu", "relu1"),
        LayerSpec("conv3x3", "conv2", 16, 2, 1),
        LayerSpec("relu", "relu2"),
        LayerSpec("conv3x3", "conv3", 32, 2, 1),
        LayerSpec("relu", "relu3"),
        LayerSpec("flatten", "flatten"),
        LayerSpec("dense", "fc1", 64),
        LayerSpec("relu", "relu4"),
        LayerSpec("dense", "head", classes),
    ]


@dataclass
class Activations:
    """Ordered (layer name, output) pairs from one forward pass."""

    entries: list[tuple[str, Tensor]] = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def __iter__(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self.entries)

    def __getitem__(self, key) -> Tensor:
        if isinstance(key, int):
            return self.entries[key][1]
        for name, t in self.entries:
            if name == key:
                return t
        raise KeyError(key)

    def names(self) -> list[str]:
        return [n for n, _ in self.entries]


@dataclass
class ModelGraph:
    layers: list[LayerSpec]
    input_shape: tuple
    classes: int
    params: dict[str, Tensor]
    out_shapes: list[tuple]
    feature_index: int
    seed: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def feature_layer(self) -> str:
        return self.layers[self.feature_index].name

    def layer_index(self, name: str) -> int:
        for i, layer in enumerate(self.layers):
            if layer.name == name:
                return i
        raise KeyError(name)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def copy(self) -> "ModelGraph":
        params = {k: Tensor(v.data.copy()) for k, v in self.params.items()}
        return ModelGraph(list(self.layers), tuple(self.input_shape), self.classes, params,
                          list(self.out_shapes), self.feature_index, self.seed, dict(self.meta))


def _propagate(layers, input_shape) -> list[tuple]:
    shapes, cur = [], tuple(input_shape)
    for layer in layers:
        if layer.kind == "conv3x3":
            if len(cur) != 3:
                raise BuildError(f"layer {layer.name!r}: conv3x3 needs a (C, H, W) input, got {cur}")
            if layer.size < 1 or layer.stride not in (1, 2) or layer.pad not in (0, 1):
                raise BuildError(f"layer {layer.name!r}: bad conv settings {layer}")
            h, w = (conv_output_size(s, layer.stride, layer.pad) for s in cur[1:])
            if h < 1 or w < 1:
                raise BuildError(f"layer {layer.name!r}: output {h}x{w} is empty for input {cur}")
            cur = (layer.size, h, w)
        elif layer.kind == "dense":
            if len(cur) != 1:
                raise BuildError(f"layer {layer.name!r}: dense needs a flat input, got {cur} (add a flatten)")
            if layer.size < 1:
                raise BuildError(f"layer {layer.name!r}: dense needs size >= 1")
            cur = (layer.size,)
        elif layer.kind == "flatten":
            cur = (int(np.prod(cur)),)
        elif layer.kind != "relu":
            raise BuildError(f"layer {layer.name!r}: unknown kind {layer.kind!r}")
        shapes.append(cur)
    return shapes


def _feature_index(layers) -> int:
    dense = [i for i, layer in enumerate(layers) if layer.kind == "dense"]
    if len(dense) < 2 or dense[-1] != len(layers) - 1:
        raise BuildError("model needs a dense head as last layer and a hidden dense feature layer before it")
    idx = dense[-2]
    if idx + 1 < len(layers) and layers[idx + 1].kind == "relu":
        idx += 1
    return idx


def build_model(spec, input_shape, classes: int, seed: int) -> ModelGraph:
    layers = list(spec)
    if not layers:
        raise BuildError("empty layer list")
    if classes < 2:
        raise BuildError(f"classes must be >= 2, got {classes}")
    names = [layer.name for layer in layers]
    if len(set(names)) != len(names):
        raise BuildError(f"duplicate layer names in {names}")
    shapes = _propagate(layers, input_shape)
    if shapes[-1] != (classes,):
        raise BuildError(f"layer {layers[-1].name!r} outputs {shapes[-1]}, expected ({classes},) logits")
    feature_index = _feature_index(layers)

    rng = Rng(seed).derive("init")
    params: dict[str, Tensor] = {}
    prev = tuple(input_shape)
    for layer, shape in zip(layers, shapes):
        if layer.kind == "conv3x3":
            fan_in = prev[0] * 9
            wshape = (layer.size, prev[0], 3, 3)
        elif layer.kind == "dense":
            fan_in = prev[0]
            wshape = (prev[0], layer.size)
        else:
            prev = shape
            continue
        limit = np.sqrt(6.0 / fan_in)
        params[f"{layer.name}.weight"] = Tensor(rng.uniform(-limit, limit, wshape), dtype=np.float32)
        params[f"{layer.name}.bias"] = Tensor(np.zeros(layer.size, dtype=np.float32))
        prev = shape
    return ModelGraph(layers, tuple(input_shape), classes, params, shapes, feature_index, seed)


def _as_input(m: ModelGraph, x) -> Tensor:
    t = x if isinstance(x, Tensor) else Tensor(x)
    if t.data.ndim != len(m.input_shape) + 1 or t.shape[1:] != tuple(m.input_shape):
        raise InputError(f"input shape {t.shape} does not match (N,) + {tuple(m.input_shape)}")
    return t


def forward_with_taps(m: ModelGraph, x) -> tuple[Tensor, Activations]:
    """Run g(x) and return the logits plus every layer output in order."""
    h = _as_input(m, x)
    acts = Activations()
    for layer in m.layers:
        if layer.kind == "conv3x3":
            h = add_bias(conv2d(h, m.params[f"{layer.name}.weight"], layer.stride, layer.pad),
                         m.params[f"{layer.name}.bias"])
        elif layer.kind == "dense":
            h = add_bias(matmul(h, m.params[f"{layer.name}.weight"]), m.params[f"{layer.name}.bias"])
        elif layer.kind == "relu":
            h = relu(h)
        else:
            h = flatten(h)
        acts.entries.append((layer.name, h))
    return h, acts


def predict_logits(m: ModelGraph, x: np.ndarray, batch: int = 256) -> np.ndarray:
    out = [forward_with_taps(m, x[i:i + batch])[0].data for i in range(0, len(x), batch)]
    return np.concatenate(out, axis=0)


def collect_layers(m: ModelGraph, x: np.ndarray, names, batch: int = 256) -> dict[str, np.ndarray]:
    """Batched forward returning the outputs of the named layers only."""
    parts: dict[str, list] = {n: [] for n in names}
    for i in range(0, len(x), batch):
        _, acts = forward_with_taps(m, x[i:i + batch])
        for n in names:
            parts[n].append(acts[n].data)
    return {n: np.concatenate(v, axis=0) for n, v in parts.items()}


@dataclass
class TrainHistory:
    loss: list[float] = field(default_factory=list)
    accuracy: list[float] = field(default_factory=list)


def train_classifier(m: ModelGraph, train_set, epochs: int = 10, batch: int = 32, lr: float = 1e-3,
                     seed: int = 0) -> tuple[ModelGraph, TrainHistory]:
    """Adam on mean cross-entropy; returns a trained copy and per-epoch history."""
    if len(train_set) == 0:
        raise DataError("empty training set")
    if epochs < 1:
        raise DataError(f"epochs must be >= 1, got {epochs}")
    model = m.copy()
    params = model.parameters()
    for p in params:
        p.requires_grad = True
    opt = Adam(params, lr=lr)
    rng = Rng(seed).derive("shuffle")
    hist = TrainHistory()
    x_all, y_all = train_set.images, train_set.labels
    n = len(y_all)
    for _ in range(epochs):
        order = rng.permutation(n)
        loss_sum, correct = 0.0, 0
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            with Tape() as tape:
                logits, _ = forward_with_taps(model, Tensor(x_all[idx]))
                loss = softmax_cross_entropy(logits, y_all[idx])
            backward(tape, loss)
            opt.step()
            loss_sum += loss.item() * len(idx)
            correct += int(np.sum(np.argmax(logits.data, axis=1) == y_all[idx]))
        hist.loss.append(loss_sum / n)
        hist.accuracy.append(correct / n)
    for p in params:
        p.requires_grad = False
        p.grad = None
    model.meta.update(train_seed=seed, epochs=epochs, batch=batch, lr=lr,
                      final_train_accuracy=hist.accuracy[-1])
    return model, hist


def evaluate_accuracy(m: ModelGraph, dataset) -> float:
    if len(dataset) == 0:
        raise DataError("empty dataset")
    pred = np.argmax(predict_logits(m, dataset.images), axis=1)
    return float(np.mean(pred == dataset.labels))


# ----------------------------------------------------------------- persistence


def model_header(m: ModelGraph) -> dict:
    return {
        "kind": "model",
        "layers": [asdict(layer) for layer in m.layers],
        "input_shape": list(m.input_shape),
        "classes": m.classes,
        "seed": m.seed,
        "params": [[k, list(v.shape)] for k, v in m.params.items()],
        "param_count": int(sum(v.size for v in m.params.values())),
        "meta": m.meta,
    }


def save_checkpoint(m: ModelGraph, path):
    return write_container(path, model_header(m), [p.data for p in m.params.values()])


def model_from_header(header: dict, blob: np.ndarray) -> ModelGraph:
    layers = [LayerSpec(**d) for d in header["layers"]]
    m = build_model(layers, tuple(header["input_shape"]), header["classes"], header["seed"])
    names = [k for k, _ in header["params"]]
    if names != list(m.params):
        raise CheckpointError(f"parameter names {names} do not match the described graph")
    arrays = split_blob(blob, [tuple(s) for _, s in header["params"]])
    for name, arr in zip(names, arrays):
        if arr.shape != m.params[name].shape:
            raise CheckpointError(f"parameter {name}: shape {arr.shape} vs graph {m.params[name].shape}")
        m.params[name] = Tensor(arr)
    m.meta = dict(header.get("meta", {}))
    return m


def load_checkpoint(path) -> ModelGraph:
    header, blob = read_container(path)
    if header.get("kind") != "model":
        raise CheckpointError(f"{path}: holds a {header.get('kind')!r}, not a model")
    return model_from_header(header, blob)
