"""White-box L-infinity attacks (FGSM, BIM, PGD) in raw [0, 1] pixel space."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset
from .digest import fnv1a64_hex
from .errors import ConfigError, DataError
from .nn import ModelGraph, forward_with_taps, predict_logits
from .rng import Rng
from .tensor import Tape, Tensor, backward, softmax_cross_entropy

KINDS = ("fgsm", "bim", "pgd")


@dataclass(frozen=True)
class AttackConfig:
    kind: str = "pgd"
    epsilon: float = 0.03
    alpha: float | None = None
    iters: int = 10
    random_start: bool | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"attack kind must be one of {KINDS}, got {self.kind!r}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if self.kind == "fgsm":
            object.__setattr__(self, "iters", 1)
            object.__setattr__(self, "random_start", False)
            object.__setattr__(self, "alpha", self.epsilon)
        else:
            if self.alpha is None:
                object.__setattr__(self, "alpha", self.epsilon / 4.0)
            if self.random_start is None:
                object.__setattr__(self, "random_start", self.kind == "pgd")
        if self.alpha is None or self.alpha < 0 or (self.alpha == 0 and self.epsilon > 0):
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if self.iters < 1:
            raise ConfigError(f"iters must be >= 1, got {self.iters}")

    def with_epsilon(self, epsilon: float) -> "AttackConfig":
        alpha = None if self.kind != "fgsm" else epsilon
        return AttackConfig(self.kind, epsilon, alpha, self.iters, self.random_start, self.seed)


def input_gradient(m: ModelGraph, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient of the mean cross-entropy with respect to the input batch."""
    xt = Tensor(x, requires_grad=True)
    with Tape() as tape:
        logits, _ = forward_with_taps(m, xt)
        loss = softmax_cross_entropy(logits, y)
    backward(tape, loss)
    return xt.grad


def _check_eps(epsilon: float):
    if not 0.0 <= epsilon <= 1.0:
        raise ConfigError(f"epsilon must lie in [0, 1], got {epsilon}")


def attack_fgsm(m: ModelGraph, x: np.ndarray, y, epsilon: float, batch: int = 256) -> np.ndarray:
    _check_eps(epsilon)
    x = np.asarray(x, dtype=np.float32)
    y = np.asarray(y, dtype=np.int64)
    eps = np.float32(epsilon)
    out = np.empty_like(x)
    for i in range(0, len(x), batch):
        xb = x[i:i + batch]
        g = input_gradient(m, xb, y[i:i + batch])
        out[i:i + batch] = np.clip(xb + eps * np.sign(g), 0.0, 1.0)
    return out


def random_start(x: np.ndarray, epsilon: float, seed: int, indices) -> np.ndarray:
    """Uniform start in the epsilon-ball; sample k draws from (seed, indices[k])."""
    base = Rng(seed).derive("random-start")
    noise = np.stack([base.derive(int(i)).uniform(-epsilon, epsilon, x.shape[1:]) for i in indices])
    return np.clip(x + noise.astype(np.float32), 0.0, 1.0).astype(np.float32)


def attack_iterative(m: ModelGraph, x: np.ndarray, y, config: AttackConfig, indices=None,
                     batch: int = 256) -> np.ndarray:
    """BIM (no random start) or PGD: signed steps, each followed by ball then box projection."""
    x = np.asarray(x, dtype=np.float32)
    y = np.asarray(y, dtype=np.int64)
    if indices is None:
        indices = np.arange(len(x))
    eps = np.float32(config.epsilon)
    alpha = np.float32(config.alpha)
    out = np.empty_like(x)
    for i in range(0, len(x), batch):
        x0 = x[i:i + batch]
        yb = y[i:i + batch]
        lo, hi = x0 - eps, x0 + eps
        xa = random_start(x0, config.epsilon, config.seed, indices[i:i + batch]) if config.random_start else x0.copy()
        for _ in range(config.iters):
            g = input_gradient(m, xa, yb)
            xa = np.clip(np.clip(xa + alpha * np.sign(g), lo, hi), 0.0, 1.0)
        out[i:i + batch] = xa
    return out


def run_attack(m: ModelGraph, x: np.ndarray, y, config: AttackConfig, indices=None) -> np.ndarray:
    if config.kind == "fgsm":
        return attack_fgsm(m, x, y, config.epsilon)
    return attack_iterative(m, x, y, config, indices)


@dataclass
class AdversarialSet:
    """Successful adversarial images with the test-set indices they came from."""

    images: np.ndarray
    labels: np.ndarray
    indices: np.ndarray
    eligible: np.ndarray
    success: np.ndarray
    config: AttackConfig
    classes: int = 0
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.indices)

    @property
    def empty(self) -> bool:
        return len(self.indices) == 0

    def as_dataset(self) -> Dataset:
        return Dataset(self.images, self.labels, self.classes,
                       {"adversarial": True, "attack": asdict(self.config)})


def build_adversarial_set(m: ModelGraph, clean: Dataset, config: AttackConfig) -> tuple[AdversarialSet, Dataset | None]:
    """Attack the correctly classified samples and keep those that flip.

    Returns the adversarial set and the matching clean subset; the clean
    subset is None when no attack succeeded.
    """
    if len(clean) == 0:
        raise DataError("empty clean set")
    pred = np.argmax(predict_logits(m, clean.images), axis=1)
    eligible = np.flatnonzero(pred == clean.labels)
    x0 = clean.images[eligible]
    y0 = clean.labels[eligible]
    if len(eligible) and config.epsilon > 0:
        xa = run_attack(m, x0, y0, config, indices=eligible)
        success = np.argmax(predict_logits(m, xa), axis=1) != y0
    else:
        xa = x0.copy()
        success = np.zeros(len(eligible), dtype=bool)
    keep = eligible[success]
    adv = AdversarialSet(
        images=xa[success], labels=y0[success], indices=keep, eligible=eligible, success=success,
        config=config, classes=clean.classes,
    )
    matched = clean.subset(keep, matched_to="adversarial") if len(keep) else None
    return adv, matched


def linf_distance(x: np.ndarray, x_adv: np.ndarray) -> np.ndarray:
    return np.abs(x_adv.astype(np.float64) - x.astype(np.float64)).reshape(len(x), -1).max(axis=1)


# ----------------------------------------------------------------- persistence


def save_adversarial_set(adv: AdversarialSet, directory) -> list[Path]:
    """Write ``manifest.json`` plus the raw little-endian float32 image blob."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    blob = np.ascontiguousarray(adv.images, dtype="<f4").tobytes()
    blob_path = d / "images.f32"
    blob_path.write_bytes(blob)
    manifest = {
        "config": asdict(adv.config),
        "image_shape": list(adv.images.shape),
        "indices": adv.indices.tolist(),
        "labels": adv.labels.tolist(),
        "eligible": adv.eligible.tolist(),
        "success": adv.success.astype(int).tolist(),
        "classes": adv.classes,
        "images_fnv1a64": fnv1a64_hex(blob),
        "pixel_space": "raw [0,1]",
    }
    man_path = d / "manifest.json"
    man_path.write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return [man_path, blob_path]


def load_adversarial_set(directory) -> AdversarialSet:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    blob = (d / "images.f32").read_bytes()
    if fnv1a64_hex(blob) != manifest["images_fnv1a64"]:
        raise DataError(f"{d}: image blob digest does not match manifest")
    images = np.frombuffer(blob, dtype="<f4").astype(np.float32).reshape(manifest["image_shape"])
    return AdversarialSet(
        images=images,
        labels=np.asarray(manifest["labels"], dtype=np.int64),
        indices=np.asarray(manifest["indices"], dtype=np.int64),
        eligible=np.asarray(manifest["eligible"], dtype=np.int64),
        success=np.asarray(manifest["success"], dtype=bool),
        config=AttackConfig(**manifest["config"]),
        classes=manifest["classes"],
    )
