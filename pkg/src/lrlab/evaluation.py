"""ROC/AUC, shift and error-gap statistics, sweeps and per-sample timing."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .attacks import AttackConfig, build_adversarial_set
from .data import Dataset
from .detector import (DetectorConfig, Regressor, Threshold, calibrate_threshold, extract_v, score,
                       train_regressor)
from .errors import ArgumentError, LRLabError
from .nn import ModelGraph, collect_layers, forward_with_taps

CSV_FIELDS = (
    "run_id", "attack", "epsilon", "auc", "theta", "h", "fpr_at_h", "tpr_at_h", "mean_ec", "std_ec",
    "mean_ea", "std_ea", "d1_mean", "dn1_mean", "pts_target_s", "pts_detector_s", "n_clean", "n_adv",
)
TIMING_FIELDS = ("pts_target_s", "pts_detector_s")


def _check(clean, adv):
    clean = np.asarray(clean, dtype=np.float64).reshape(-1)
    adv = np.asarray(adv, dtype=np.float64).reshape(-1)
    if clean.size == 0 or adv.size == 0:
        raise ArgumentError("score lists must be nonempty")
    return clean, adv


def auc(clean_scores, adv_scores) -> float:
    """Mann-Whitney AUC with the adversarial set as positives; ties count half."""
    clean, adv = _check(clean_scores, adv_scores)
    allv = np.concatenate([adv, clean])
    order = np.argsort(allv, kind="mergesort")
    sorted_v = allv[order]
    # midranks over tie groups
    starts = np.flatnonzero(np.r_[True, sorted_v[1:] != sorted_v[:-1]])
    ends = np.r_[starts[1:], len(sorted_v)]
    mid = (starts + ends + 1) / 2.0
    ranks = np.empty(len(allv))
    ranks[order] = np.repeat(mid, ends - starts)
    na, nc = len(adv), len(clean)
    u = ranks[:na].sum() - na * (na + 1) / 2.0
    return float(u / (na * nc))


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray

    def area(self) -> float:
        return float(np.sum(np.diff(self.fpr) * (self.tpr[1:] + self.tpr[:-1]) / 2.0))

    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def roc_curve(clean_scores, adv_scores) -> RocCurve:
    """Points for 'flag if score >= t' at each distinct score, descending, plus (0,0) and (1,1)."""
    clean, adv = _check(clean_scores, adv_scores)
    thr = np.unique(np.concatenate([clean, adv]))[::-1]
    cs, as_ = np.sort(clean), np.sort(adv)
    fp = len(cs) - np.searchsorted(cs, thr, side="left")
    tp = len(as_) - np.searchsorted(as_, thr, side="left")
    fpr = np.r_[0.0, fp / len(cs), 1.0]
    tpr = np.r_[0.0, tp / len(as_), 1.0]
    return RocCurve(fpr, tpr, np.r_[np.inf, thr, -np.inf])


@dataclass
class MeanStd:
    mean: float
    std: float
    n: int

    @classmethod
    def of(cls, values) -> "MeanStd":
        v = np.asarray(values, dtype=np.float64)
        if v.size == 0:
            return cls(float("nan"), float("nan"), 0)
        return cls(float(v.mean()), float(v.std()), int(v.size))


def normalized_shift(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """||a - b|| / (||a|| + ||b||) per sample; returns (values, kept mask)."""
    a = a.reshape(len(a), -1).astype(np.float64)
    b = b.reshape(len(b), -1).astype(np.float64)
    denom = np.linalg.norm(a, axis=1) + np.linalg.norm(b, axis=1)
    keep = denom > 0
    out = np.zeros(len(a))
    out[keep] = np.linalg.norm(a - b, axis=1)[keep] / denom[keep]
    return out, keep


@dataclass
class ShiftStats:
    first: MeanStd
    feature: MeanStd
    skipped: int
    first_values: np.ndarray = field(repr=False, default=None)
    feature_values: np.ndarray = field(repr=False, default=None)

    def paired_margin(self) -> tuple[float, float]:
        """Mean of (feature - first) shift and its standard error."""
        d = self.feature_values - self.first_values
        return float(d.mean()), float(d.std(ddof=1) / np.sqrt(len(d))) if len(d) > 1 else float("nan")


def layer_shift_stats(m: ModelGraph, x: np.ndarray, x_adv: np.ndarray, first_tap: str | None = None,
                      feature_layer: str | None = None) -> ShiftStats:
    """Normalized change of an early layer and of the feature layer under attack."""
    first_tap = first_tap or m.layers[0].name
    feature_layer = feature_layer or m.feature_layer
    names = list(dict.fromkeys([first_tap, feature_layer]))
    clean = collect_layers(m, x, names)
    adv = collect_layers(m, x_adv, names)
    d1, k1 = normalized_shift(adv[first_tap], clean[first_tap])
    dn, kn = normalized_shift(adv[feature_layer], clean[feature_layer])
    keep = k1 & kn
    return ShiftStats(MeanStd.of(d1[keep]), MeanStd.of(dn[keep]), int((~keep).sum()), d1[keep], dn[keep])


@dataclass
class ErrorGap:
    clean: MeanStd
    adversarial: MeanStd
    gap: float


def error_gap_stats(clean_scores, adv_scores) -> ErrorGap:
    c, a = _check(clean_scores, adv_scores)
    ec, ea = MeanStd.of(c), MeanStd.of(a)
    return ErrorGap(ec, ea, ea.mean - ec.mean)


# ----------------------------------------------------------------- timing


@dataclass
class BenchResult:
    target_pts: float
    detector_pts: float
    target_runs: list
    detector_runs: list
    samples: int
    batch_size: int

    def __iter__(self):
        return iter((self.target_pts, self.detector_pts))

    @property
    def ratio(self) -> float:
        return self.detector_pts / self.target_pts


def bench_pts(m: ModelGraph, reg: Regressor, samples: np.ndarray, repetitions: int = 5,
              batch_size: int | None = None) -> BenchResult:
    """Median over repetitions of wall time per sample for target and detector.

    Samples go through in chunks of ``batch_size`` (default: all at once;
    1 gives single-sample latency). Target time is the forward pass with
    taps; detector time is the extra work on those activations (slice,
    regress, squared error). One warm-up pass precedes the measured runs.
    """
    if repetitions < 3:
        raise ArgumentError(f"repetitions must be >= 3, got {repetitions}")
    samples = np.asarray(samples, dtype=np.float32)
    n = len(samples)
    bs = n if batch_size is None else int(batch_size)
    chunks = [samples[i:i + bs] for i in range(0, n, bs)]

    def run_target():
        acts = []
        t0 = time.perf_counter()
        for xb in chunks:
            acts.append(forward_with_taps(m, xb)[1])
        return (time.perf_counter() - t0) / n, acts

    def run_detector(acts):
        t0 = time.perf_counter()
        for a in acts:
            feat = a[reg.feature_layer].data
            d = reg.predict(extract_v(a, reg.taps)) - feat.reshape(len(feat), -1)
            np.mean(d * d, axis=1)
        return (time.perf_counter() - t0) / n

    _, acts = run_target()
    run_detector(acts)
    t_runs, d_runs = [], []
    for _ in range(repetitions):
        t, acts = run_target()
        t_runs.append(t)
        d_runs.append(run_detector(acts))
    return BenchResult(float(np.median(t_runs)), float(np.median(d_runs)), t_runs, d_runs, n, bs)


# ----------------------------------------------------------------- reports


@dataclass
class EvalReport:
    run_id: str
    attack: dict
    auc: float | None
    roc: list
    d1: MeanStd | None
    dn1: MeanStd | None
    shift_skipped: int
    ec: MeanStd | None
    ea: MeanStd | None
    gap: float | None
    h: float
    theta: float
    fpr_at_h: float | None
    tpr_at_h: float | None
    n_clean: int
    n_adv: int
    n_eligible: int
    pts_target_s: float | None = None
    pts_detector_s: float | None = None
    digests: dict = field(default_factory=dict)
    note: str = ""

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self), default=float))

    def csv_row(self) -> dict:
        def ms(x, part):
            return None if x is None else getattr(x, part)

        return {
            "run_id": self.run_id, "attack": self.attack["kind"], "epsilon": self.attack["epsilon"],
            "auc": self.auc, "theta": self.theta, "h": self.h, "fpr_at_h": self.fpr_at_h,
            "tpr_at_h": self.tpr_at_h, "mean_ec": ms(self.ec, "mean"), "std_ec": ms(self.ec, "std"),
            "mean_ea": ms(self.ea, "mean"), "std_ea": ms(self.ea, "std"), "d1_mean": ms(self.d1, "mean"),
            "dn1_mean": ms(self.dn1, "mean"), "pts_target_s": self.pts_target_s,
            "pts_detector_s": self.pts_detector_s, "n_clean": self.n_clean, "n_adv": self.n_adv,
        }

    def without_timing(self) -> dict:
        d = self.to_dict()
        for k in TIMING_FIELDS:
            d.pop(k, None)
        return d


def format_csv_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def csv_lines(rows) -> list[str]:
    lines = [",".join(CSV_FIELDS)]
    for r in rows:
        lines.append(",".join(format_csv_value(r[k]) for k in CSV_FIELDS))
    return lines


def evaluate(m: ModelGraph, reg: Regressor, threshold: Threshold, clean_test: Dataset, attack: AttackConfig,
             run_id: str = "", first_tap: str | None = None) -> EvalReport:
    """Attack the test set, score clean and adversarial samples, summarize."""
    adv, matched = build_adversarial_set(m, clean_test, attack)
    return evaluate_sets(m, reg, threshold, adv, matched, attack, run_id, first_tap)


def evaluate_sets(m, reg, threshold, adv, matched, attack, run_id="", first_tap=None) -> EvalReport:
    if adv.empty:
        return EvalReport(run_id, asdict(attack), None, [], None, None, 0, None, None, None, threshold.h,
                          threshold.theta, None, None, 0, 0, len(adv.eligible), note="no successful adversarials")
    sc = score(m, reg, None, matched.images)
    sa = score(m, reg, None, adv.images)
    roc = roc_curve(sc, sa)
    shift = layer_shift_stats(m, matched.images, adv.images, first_tap)
    gap = error_gap_stats(sc, sa)
    return EvalReport(
        run_id=run_id, attack=asdict(attack), auc=auc(sc, sa), roc=roc.points(),
        d1=shift.first, dn1=shift.feature, shift_skipped=shift.skipped,
        ec=gap.clean, ea=gap.adversarial, gap=gap.gap, h=threshold.h, theta=threshold.theta,
        fpr_at_h=float(np.mean(sc > threshold.h)), tpr_at_h=float(np.mean(sa > threshold.h)),
        n_clean=len(sc), n_adv=len(sa), n_eligible=len(adv.eligible),
    )


# ----------------------------------------------------------------- sweeps


@dataclass
class SweepEntry:
    label: str
    value: float | None
    report: EvalReport | None
    error: str | None = None

    @property
    def auc(self) -> float | None:
        return None if self.report is None else self.report.auc


@dataclass
class SweepResult:
    parameter: str
    entries: list

    def labels(self) -> list[str]:
        return [e.label for e in self.entries]

    def aucs(self) -> dict:
        return {e.label: e.auc for e in self.entries}

    def to_dict(self) -> dict:
        return {
            "parameter": self.parameter,
            "entries": [
                {"label": e.label, "value": e.value, "auc": e.auc, "error": e.error,
                 "report": None if e.report is None else e.report.to_dict()}
                for e in self.entries
            ],
        }


def sweep_epsilon(m: ModelGraph, reg: Regressor, threshold: Threshold, clean_test: Dataset, base: AttackConfig,
                  epsilons, run_id: str = "") -> SweepResult:
    eps = [float(e) for e in epsilons]
    if not eps or any(not 0 < e <= 1 for e in eps) or any(b <= a for a, b in zip(eps, eps[1:])):
        raise ArgumentError(f"epsilon list must be strictly increasing within (0, 1], got {eps}")
    entries = []
    for e in eps:
        cfg = base.with_epsilon(e)
        rep = evaluate(m, reg, threshold, clean_test, cfg, run_id)
        entries.append(SweepEntry(f"{cfg.kind}@{e:g}", e, rep))
    return SweepResult("epsilon", entries)


def sweep_taps(m: ModelGraph, detector_train: Dataset, calibration: Dataset, clean_test: Dataset,
               base: DetectorConfig, configs, attack: AttackConfig, run_id: str = "") -> SweepResult:
    """Train and calibrate one fresh regressor per (label, taps) entry and evaluate each."""
    configs = list(configs)
    if not configs:
        raise ArgumentError("no tap configurations given")
    labels = [label for label, _ in configs]
    if len(set(labels)) != len(labels):
        raise ArgumentError(f"duplicate configuration labels in {labels}")
    adv, matched = build_adversarial_set(m, clean_test, attack)
    entries = []
    for label, taps in configs:
        cfg = DetectorConfig(taps=list(taps), hidden=base.hidden, lr=base.lr, epochs=base.epochs,
                             batch=base.batch, theta=base.theta, seed=base.seed)
        try:
            reg, _ = train_regressor(m, detector_train, cfg)
            th = calibrate_threshold(score(m, reg, None, calibration.images), cfg.theta)
            rep = evaluate_sets(m, reg, th, adv, matched, attack, run_id)
        except LRLabError as exc:
            entries.append(SweepEntry(label, None, None, f"{type(exc).__name__}: {exc}"))
            continue
        entries.append(SweepEntry(label, None, rep))
    return SweepResult("taps", entries)
