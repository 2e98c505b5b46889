"""Run configuration, pipeline stages and artifact bookkeeping."""
from __future__ import annotations

import copy
import hashlib
import json
import logging
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .attacks import AttackConfig, build_adversarial_set, load_adversarial_set, save_adversarial_set
from .checkpoint import canonical_json, read_container, write_container
from .data import Dataset, SplitPlan, generate_synthetic, load_idx, split_indices, SPLIT_NAMES
from .detector import (DetectorConfig, TapSpec, calibrate_threshold, desk_tap_configs, desk_taps,
                       load_detector, save_detector, save_threshold, score, train_regressor)
from .digest import file_digest, fnv1a64_hex
from .errors import ConfigError, EmptyAdversarialSetError, LRLabError, MissingArtifactError
from .evaluation import (TIMING_FIELDS, SweepResult, bench_pts, csv_lines, evaluate_sets, sweep_epsilon,
                         sweep_taps)
from .nn import build_model, desk_spec, evaluate_accuracy, load_checkpoint, save_checkpoint, train_classifier

log = logging.getLogger(__name__)

# ----------------------------------------------------------------- config

SCHEMA = {
    "data": {
        "source": ("synthetic", "idx"),
        "seed": int,
        "n": int,
        "classes": int,
        "size": int,
        "idx_images": (str, type(None)),
        "idx_labels": (str, type(None)),
        "split": list,
        "split_seed": int,
    },
    "model": {"spec": ("desk",), "epochs": int, "batch": int, "lr": float, "seed": int},
    "attack": {
        "kind": ("fgsm", "bim", "pgd"),
        "epsilon": float,
        "alpha": (float, type(None)),
        "iters": int,
        "random_start": (bool, type(None)),
        "seed": int,
    },
    "detector": {
        "taps": (str, list),
        "hidden": list,
        "lr": float,
        "epochs": int,
        "batch": int,
        "theta": float,
        "seed": int,
    },
    "eval": {
        "timing_reps": int,
        "timing_samples": int,
        "timing_batch": (int, type(None)),
        "sweep_kinds": list,
        "sweep_eps": list,
        "tap_configs": (str, list),
        "run_sweeps": bool,
    },
    "output": {"dir": str},
}
SEED_KEYS = ("data.seed", "data.split_seed", "model.seed", "attack.seed", "detector.seed")


def default_config() -> dict:
    text = resources.files("lrlab").joinpath("configs/default.json").read_text()
    return json.loads(text)


def _type_ok(value, rule) -> bool:
    if isinstance(rule, tuple) and rule and not isinstance(rule[0], type):
        return value in rule
    types = rule if isinstance(rule, tuple) else (rule,)
    if float in types and isinstance(value, int) and not isinstance(value, bool):
        return True
    if int in types and isinstance(value, bool):
        return False
    return isinstance(value, types)


def validate_config(cfg: dict) -> dict:
    """Check keys and leaf types, then the cross-field constraints."""
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(cfg) - set(SCHEMA)
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    for section, fields in SCHEMA.items():
        if section not in cfg or not isinstance(cfg[section], dict):
            raise ConfigError(f"missing section {section!r}")
        extra = set(cfg[section]) - set(fields)
        if extra:
            raise ConfigError(f"unknown keys in {section!r}: {sorted(extra)}")
        for key, rule in fields.items():
            if key not in cfg[section]:
                raise ConfigError(f"missing key {section}.{key}")
            if not _type_ok(cfg[section][key], rule):
                raise ConfigError(f"{section}.{key}={cfg[section][key]!r} does not match {rule}")
    d, a, det, ev = cfg["data"], cfg["attack"], cfg["detector"], cfg["eval"]
    if d["source"] == "idx" and not (d["idx_images"] and d["idx_labels"]):
        raise ConfigError("data.source=idx needs data.idx_images and data.idx_labels")
    if len(d["split"]) != 4:
        raise ConfigError("data.split needs four fractions")
    if not 0 < a["epsilon"] <= 1:
        raise ConfigError(f"attack.epsilon must lie in (0, 1], got {a['epsilon']}")
    if a["iters"] < 1:
        raise ConfigError("attack.iters must be >= 1")
    if len(det["hidden"]) != 2:
        raise ConfigError("detector.hidden needs exactly two sizes")
    if not 0 < det["theta"] < 100:
        raise ConfigError("detector.theta must lie in (0, 100)")
    if ev["timing_reps"] < 3:
        raise ConfigError("eval.timing_reps must be >= 3")
    try:
        AttackConfig(a["kind"], a["epsilon"], a["alpha"], a["iters"], a["random_start"], a["seed"])
        SplitPlan(tuple(d["split"]), d["split_seed"]).sizes(max(d["n"], 1))
        parse_taps(det["taps"])
        parse_tap_configs(ev["tap_configs"])
        for kind in ev["sweep_kinds"]:
            AttackConfig(kind, 0.03)
    except LRLabError as exc:
        raise ConfigError(str(exc)) from None
    eps = ev["sweep_eps"]
    if not eps or any(not 0 < e <= 1 for e in eps) or any(y <= x for x, y in zip(eps, eps[1:])):
        raise ConfigError("eval.sweep_eps must be strictly increasing within (0, 1]")
    return cfg


def set_dotted(cfg: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        if k not in node or not isinstance(node[k], dict):
            raise ConfigError(f"unknown config path {dotted!r}")
        node = node[k]
    if keys[-1] not in node:
        raise ConfigError(f"unknown config path {dotted!r}")
    node[keys[-1]] = value


def load_config(path=None, overrides=(), seed=None, out=None) -> dict:
    if path is None:
        cfg = default_config()
    else:
        try:
            cfg = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    cfg = copy.deepcopy(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        set_dotted(cfg, key, value)
    if seed is not None:
        for key in SEED_KEYS:
            set_dotted(cfg, key, int(seed))
    if out is not None:
        set_dotted(cfg, "output.dir", str(out))
    return validate_config(cfg)


def run_id(cfg: dict) -> str:
    """FNV-1a-64 of the canonical config, output location excluded."""
    body = {k: v for k, v in cfg.items() if k != "output"}
    return fnv1a64_hex(canonical_json(body).encode())


def parse_taps(spec) -> list[TapSpec]:
    if spec == "desk":
        return desk_taps()
    if isinstance(spec, str):
        raise ConfigError(f"unknown tap preset {spec!r}")
    try:
        return [TapSpec.from_dict(t) for t in spec]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad tap list: {exc}") from None


def parse_tap_configs(spec) -> list[tuple[str, list[TapSpec]]]:
    if spec == "desk":
        return desk_tap_configs()
    if isinstance(spec, str):
        raise ConfigError(f"unknown tap-config preset {spec!r}")
    return [(entry["label"], parse_taps(entry["taps"])) for entry in spec]


def attack_config(cfg: dict) -> AttackConfig:
    a = cfg["attack"]
    return AttackConfig(a["kind"], float(a["epsilon"]), a["alpha"], a["iters"], a["random_start"], a["seed"])


def detector_config(cfg: dict) -> DetectorConfig:
    d = cfg["detector"]
    return DetectorConfig(parse_taps(d["taps"]), tuple(d["hidden"]), float(d["lr"]), d["epochs"], d["batch"],
                          float(d["theta"]), d["seed"])


# ----------------------------------------------------------------- artifacts

STAGES = ("synth-data", "train-target", "attack", "train-detector", "calibrate", "bench", "evaluate",
          "sweep-eps", "sweep-taps")
UPSTREAM = {
    "synth-data": [],
    "train-target": ["dataset.lrck"],
    "attack": ["dataset.lrck", "model.lrck"],
    "train-detector": ["dataset.lrck", "model.lrck"],
    "calibrate": ["dataset.lrck", "model.lrck", "detector.lrck"],
    "bench": ["dataset.lrck", "model.lrck", "detector_calibrated.lrck"],
    "evaluate": ["model.lrck", "detector_calibrated.lrck", "threshold.json", "adversarial/manifest.json",
                 "dataset.lrck"],
    "sweep-eps": ["dataset.lrck", "model.lrck", "detector_calibrated.lrck"],
    "sweep-taps": ["dataset.lrck", "model.lrck"],
}
# files whose bytes legitimately change between identical runs
TIMING_ARTIFACTS = ("bench.json", "report.json", "report.csv", "run_manifest.json", "stages.json")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=1, default=float) + "\n")
    return path


class Run:
    """One output directory plus the validated config driving it."""

    def __init__(self, cfg: dict):
        self.cfg = cfg
        self.out = Path(cfg["output"]["dir"])
        self.run_id = run_id(cfg)
        # output location excluded so a moved run directory still resumes
        body = {k: v for k, v in cfg.items() if k != "output"}
        self.config_digest = hashlib.sha256(canonical_json(body).encode()).hexdigest()
        self.written: list[Path] = []
        self._cache: dict = {}

    def path(self, rel: str) -> Path:
        return self.out / rel

    def require(self, stage: str):
        missing = [rel for rel in UPSTREAM[stage] if not self.path(rel).exists()]
        if missing:
            raise MissingArtifactError(f"stage {stage}: missing upstream artifacts {missing} in {self.out}")

    # stage bookkeeping for idempotent resume
    def _stages(self) -> dict:
        p = self.path("stages.json")
        return json.loads(p.read_text()) if p.exists() else {}

    def is_current(self, stage: str) -> bool:
        rec = self._stages().get(stage)
        if not rec or rec.get("config") != self.config_digest:
            return False
        for rel, digest in {**rec.get("inputs", {}), **rec["outputs"]}.items():
            p = self.path(rel)
            if not p.exists() or _sha256(p) != digest:
                return False
        return True

    def record(self, stage: str, outputs) -> None:
        rec = self._stages()
        rec[stage] = {"config": self.config_digest,
                      "inputs": {rel: _sha256(self.path(rel)) for rel in UPSTREAM[stage]},
                      "outputs": {str(p.relative_to(self.out)): _sha256(p) for p in outputs}}
        _write_json(self.path("stages.json"), rec)

    # loaders
    def dataset_parts(self) -> dict[str, Dataset]:
        if "parts" not in self._cache:
            header, blob = read_container(self.path("dataset.lrck"))
            images = blob.reshape(header["image_shape"])
            full = Dataset(images, header["labels"], header["classes"], header["provenance"])
            self._cache["parts"] = {
                name: full.subset(header["splits"][name], split=name) for name in SPLIT_NAMES
            }
        return self._cache["parts"]

    def model(self):
        return load_checkpoint(self.path("model.lrck"))


def _data(run: Run) -> list[Path]:
    d = run.cfg["data"]
    if d["source"] == "synthetic":
        ds = generate_synthetic(d["seed"], d["n"], d["classes"], d["size"])
    else:
        ds = load_idx(d["idx_images"], d["idx_labels"])
    parts = split_indices(len(ds), SplitPlan(tuple(d["split"]), d["split_seed"]))
    header = {
        "kind": "dataset",
        "image_shape": list(ds.images.shape),
        "labels": ds.labels.tolist(),
        "classes": ds.classes,
        "provenance": ds.provenance,
        "splits": {name: idx.tolist() for name, idx in zip(SPLIT_NAMES, parts)},
    }
    blob_path = write_container(run.path("dataset.lrck"), header, [ds.images])
    manifest = {
        "provenance": ds.provenance,
        "n": len(ds),
        "classes": ds.classes,
        "image_shape": list(ds.images.shape[1:]),
        "split_sizes": {name: len(idx) for name, idx in zip(SPLIT_NAMES, parts)},
        "split_fnv1a64": {name: fnv1a64_hex(idx.astype("<i8").tobytes()) for name, idx in zip(SPLIT_NAMES, parts)},
        "images_fnv1a64": fnv1a64_hex(np.ascontiguousarray(ds.images, dtype="<f4").tobytes()),
        "container_fnv1a64": file_digest(blob_path),
    }
    return [blob_path, _write_json(run.path("dataset.json"), manifest)]


def _train_target(run: Run) -> list[Path]:
    c = run.cfg["model"]
    parts = run.dataset_parts()
    train = parts["target_train"]
    m = build_model(desk_spec(train.classes), train.images.shape[1:], train.classes, c["seed"])
    m, hist = train_classifier(m, train, c["epochs"], c["batch"], c["lr"], c["seed"])
    acc = evaluate_accuracy(m, parts["test"])
    m.meta["test_accuracy"] = acc
    path = save_checkpoint(m, run.path("model.lrck"))
    log.info("train-target: test accuracy %.4f", acc)
    return [path, _write_json(run.path("target_history.json"),
                              {"loss": hist.loss, "accuracy": hist.accuracy, "test_accuracy": acc})]


def _attack(run: Run) -> list[Path]:
    m = run.model()
    cfg = attack_config(run.cfg)
    adv, _ = build_adversarial_set(m, run.dataset_parts()["test"], cfg)
    paths = save_adversarial_set(adv, run.path("adversarial"))
    log.info("attack: %d of %d eligible samples flipped", len(adv), len(adv.eligible))
    if adv.empty:
        raise EmptyAdversarialSetError(f"stage attack: {cfg.kind} at epsilon {cfg.epsilon} produced no adversarials")
    return paths


def _train_detector(run: Run) -> list[Path]:
    m = run.model()
    dcfg = detector_config(run.cfg)
    reg, hist = train_regressor(m, run.dataset_parts()["detector_train"], dcfg)
    path = save_detector(reg, run.path("detector.lrck"), theta=dcfg.theta)
    return [path, _write_json(run.path("detector_history.json"), {"loss": hist.loss})]


def _calibrate(run: Run) -> list[Path]:
    m = run.model()
    reg, _ = load_detector(run.path("detector.lrck"))
    theta = float(run.cfg["detector"]["theta"])
    th = calibrate_threshold(score(m, reg, None, run.dataset_parts()["calibration"].images), theta)
    log.info("calibrate: h=%.6g at theta=%g over K=%d", th.h, th.theta, th.k)
    return [save_threshold(th, run.path("threshold.json")),
            save_detector(reg, run.path("detector_calibrated.lrck"), threshold=th)]


def _bench(run: Run) -> list[Path]:
    m = run.model()
    reg, _ = load_detector(run.path("detector_calibrated.lrck"))
    ev = run.cfg["eval"]
    x = run.dataset_parts()["test"].images[: ev["timing_samples"]]
    res = bench_pts(m, reg, x, ev["timing_reps"], ev["timing_batch"])
    single = bench_pts(m, reg, x, ev["timing_reps"], 1)
    out = {
        "pts_target_s": res.target_pts, "pts_detector_s": res.detector_pts, "ratio": res.ratio,
        "batch_size": res.batch_size, "samples": res.samples, "target_runs": res.target_runs,
        "detector_runs": res.detector_runs,
        "single_sample": {"pts_target_s": single.target_pts, "pts_detector_s": single.detector_pts,
                          "ratio": single.ratio},
    }
    log.info("bench: detector/target = %.3f (batch %d), %.3f (batch 1)", res.ratio, res.batch_size, single.ratio)
    return [_write_json(run.path("bench.json"), out)]


def _digests(run: Run) -> dict:
    return {name: file_digest(run.path(name)) for name in ("model.lrck", "detector_calibrated.lrck")}


def _evaluate(run: Run) -> list[Path]:
    m = run.model()
    reg, th = load_detector(run.path("detector_calibrated.lrck"))
    adv = load_adversarial_set(run.path("adversarial"))
    if adv.empty:
        raise EmptyAdversarialSetError("stage evaluate: adversarial set is empty")
    test = run.dataset_parts()["test"]
    matched = test.subset(adv.indices)
    rep = evaluate_sets(m, reg, th, adv, matched, adv.config, run.run_id)
    rep.digests = _digests(run)
    bench = run.path("bench.json")
    if bench.exists():
        b = json.loads(bench.read_text())
        rep.pts_target_s, rep.pts_detector_s = b["pts_target_s"], b["pts_detector_s"]
    log.info("evaluate: AUC %.4f on %d clean / %d adversarial", rep.auc, rep.n_clean, rep.n_adv)
    csv = run.path("report.csv")
    csv.write_text("\n".join(csv_lines([rep.csv_row()])) + "\n")
    return [_write_json(run.path("report.json"), rep.to_dict()), csv]


def _sweep_csv(path: Path, result) -> Path:
    rows = []
    for e in result.entries:
        if e.report is not None:
            row = e.report.csv_row()
            row["run_id"] = f"{e.report.run_id}:{e.label}"
            rows.append(row)
    path.write_text("\n".join(csv_lines(rows)) + "\n")
    return path


def _sweep_eps(run: Run) -> list[Path]:
    m = run.model()
    reg, th = load_detector(run.path("detector_calibrated.lrck"))
    test = run.dataset_parts()["test"]
    ev = run.cfg["eval"]
    a = run.cfg["attack"]
    out = {}
    entries = []
    for kind in ev["sweep_kinds"]:
        base = AttackConfig(kind, float(a["epsilon"]), None, a["iters"], None, a["seed"])
        res = sweep_epsilon(m, reg, th, test, base, ev["sweep_eps"], run.run_id)
        out[kind] = res.to_dict()
        entries.extend(res.entries)
        log.info("sweep-eps %s: %s", kind, {k: (None if v is None else round(v, 4)) for k, v in res.aucs().items()})
    return [_write_json(run.path("sweep_eps.json"), out),
            _sweep_csv(run.path("sweep_eps.csv"), SweepResult("epsilon", entries))]


def _sweep_taps(run: Run) -> list[Path]:
    m = run.model()
    parts = run.dataset_parts()
    res = sweep_taps(m, parts["detector_train"], parts["calibration"], parts["test"], detector_config(run.cfg),
                     parse_tap_configs(run.cfg["eval"]["tap_configs"]), attack_config(run.cfg), run.run_id)
    log.info("sweep-taps: %s", {k: (None if v is None else round(v, 4)) for k, v in res.aucs().items()})
    return [_write_json(run.path("sweep_taps.json"), res.to_dict()),
            _sweep_csv(run.path("sweep_taps.csv"), res)]


STAGE_FUNCS = {
    "synth-data": _data,
    "train-target": _train_target,
    "attack": _attack,
    "train-detector": _train_detector,
    "calibrate": _calibrate,
    "bench": _bench,
    "evaluate": _evaluate,
    "sweep-eps": _sweep_eps,
    "sweep-taps": _sweep_taps,
}


def run_stage(run: Run, stage: str, force: bool = False) -> list[Path]:
    if not force and run.is_current(stage):
        log.info("%s: artifacts current, skipping", stage)
        return [run.path(rel) for rel in run._stages()[stage]["outputs"]]
    run.require(stage)
    log.info("%s: running", stage)
    outputs = STAGE_FUNCS[stage](run)
    run.record(stage, outputs)
    return outputs


def write_manifest(run: Run, command: str, started: float, outputs, seconds=None) -> Path:
    path = run.path("run_manifest.json")
    previous = json.loads(path.read_text()) if path.exists() else {}
    artifacts = set(previous.get("artifacts", [])) | {str(p.relative_to(run.out)) for p in outputs}
    manifest = {
        "run_id": run.run_id,
        "command": command,
        "config_digest": run.config_digest,
        "artifacts": sorted(artifacts | {"config.json", "stages.json"}),
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "tool_version": __version__,
        "stage_seconds": seconds or {},
    }
    return _write_json(path, manifest)


def execute(cfg: dict, command: str, force: bool = False) -> Run:
    """Run one stage, or every stage for ``pipeline``."""
    run = Run(cfg)
    run.out.mkdir(parents=True, exist_ok=True)
    _write_json(run.path("config.json"), cfg)
    started = time.time()
    stages = [s for s in STAGES if cfg["eval"]["run_sweeps"] or not s.startswith("sweep")]
    todo = stages if command == "pipeline" else [command]
    outputs, seconds = [], {}
    for stage in todo:
        t0 = time.perf_counter()
        outputs.extend(run_stage(run, stage, force))
        seconds[stage] = round(time.perf_counter() - t0, 3)
    write_manifest(run, command, started, outputs, seconds)
    return run


def non_timing_snapshot(out_dir) -> dict[str, str]:
    """sha256 of every artifact that must reproduce byte for byte.

Timing-bearing files are left out; the report is hashed with its timing
fields removed and the config with its output location removed.
"""
    out_dir = Path(out_dir)
    snap = {}
    for p in sorted(out_dir.rglob("*")):
        if not p.is_file():
            continue
        rel = str(p.relative_to(out_dir))
        if rel in TIMING_ARTIFACTS:
            continue
        if rel == "config.json":
            cfg = json.loads(p.read_text())
            cfg.pop("output", None)
            snap["config.json[no-output]"] = hashlib.sha256(canonical_json(cfg).encode()).hexdigest()
            continue
        snap[rel] = _sha256(p)
    rep = out_dir / "report.json"
    if rep.exists():
        d = json.loads(rep.read_text())
        for k in TIMING_FIELDS:
            d.pop(k, None)
        snap["report.json[non-timing]"] = hashlib.sha256(canonical_json(d).encode()).hexdigest()
    return snap


__all__ = ["Run", "execute", "load_config", "validate_config", "run_id", "STAGES", "non_timing_snapshot"]
