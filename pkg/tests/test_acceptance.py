"""Acceptance criteria on the seed-7 desk pipeline.

Each test prints exactly one ``[PASS]``/``[FAIL]`` line and the same lines are
repeated in the terminal summary. Tolerances are the contract values; none are
relaxed here.
"""
import json
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from lrlab.attacks import AttackConfig, load_adversarial_set, run_attack
from lrlab.detector import Verdict, detect, load_detector, score
from lrlab.evaluation import auc, evaluate, layer_shift_stats, roc_curve
from lrlab.nn import evaluate_accuracy, predict_logits
from lrlab.pipeline import execute, load_config, non_timing_snapshot
from lrlab.tensor import Tensor, conv2d, matmul
from oracles import naive_conv, naive_matmul, pairwise_auc, trapezoid

pytestmark = pytest.mark.slow


def report(number, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


@pytest.fixture(scope="session")
def desk(tmp_path_factory):
    """Full default pipeline; per-stage wall times come from the run manifest."""
    run = execute(load_config(out=tmp_path_factory.mktemp("desk-a")), "pipeline")
    times = json.loads(run.path("run_manifest.json").read_text())["stage_seconds"]
    return run, times


@pytest.fixture(scope="session")
def artifacts(desk):
    run, _ = desk
    model = run.model()
    reg, th = load_detector(run.path("detector_calibrated.lrck"))
    return run, model, reg, th, run.dataset_parts()


def test_c01_gradient_suite():
    t0 = time.perf_counter()
    proc = subprocess.run(
        [sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", "-k", "fd_ or gradient",
         str(Path(__file__).parent / "test_numerics.py")],
        capture_output=True, text=True)
    elapsed = time.perf_counter() - t0
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    report(1, proc.returncode == 0 and elapsed < 30,
           f"finite-difference suite ({summary}) in {elapsed:.1f}s (limit 30s)")


def test_c02_numeric_oracles():
    g = np.random.default_rng(2)
    x = g.standard_normal((2, 3, 8, 8)).astype(np.float32)
    k = g.standard_normal((4, 3, 3, 3)).astype(np.float32)
    conv_err = max(np.abs(conv2d(Tensor(x), Tensor(k), s, p).data - naive_conv(x, k, s, p)).max()
                   for s in (1, 2) for p in (0, 1))
    a, b = g.standard_normal((8, 8)).astype(np.float32), g.standard_normal((8, 8)).astype(np.float32)
    mm_err = np.abs(matmul(Tensor(a), Tensor(b)).data - naive_matmul(a, b)).max()
    auc_err = trap_err = 0.0
    for i in range(200):
        c, d = g.standard_normal(g.integers(1, 50)), g.standard_normal(g.integers(1, 50)) + 0.4
        if i % 2:
            c, d = np.round(c, 1), np.round(d, 1)
        auc_err = max(auc_err, abs(auc(c, d) - pairwise_auc(c, d)))
        trap_err = max(trap_err, abs(trapezoid(roc_curve(c, d).points()) - auc(c, d)))
    ok = conv_err < 1e-5 and mm_err < 1e-5 and auc_err < 1e-12 and trap_err < 1e-9
    report(2, ok, f"conv {conv_err:.1e}, matmul {mm_err:.1e} (<1e-5); auc vs pairwise {auc_err:.1e} (<1e-12); "
                  f"trapezoid {trap_err:.1e} (<1e-9) over 200 sets")


def test_c03_target_viability(desk, artifacts):
    run, times = desk
    _, model, _, _, parts = artifacts
    acc = evaluate_accuracy(model, parts["test"])
    epochs = len(json.loads(run.path("target_history.json").read_text())["loss"])
    secs = times["train-target"]
    report(3, acc >= 0.95 and epochs <= 10 and secs <= 120,
           f"test accuracy {acc:.4f} (>=0.95) after {epochs} epochs (<=10) in {secs:.1f}s (<=120s)")


def test_c04_attack_efficacy(artifacts):
    run, model, _, _, parts = artifacts
    test = parts["test"]
    saved = load_adversarial_set(run.path("adversarial"))
    cfg = saved.config
    x0, y0 = test.images[saved.eligible], test.labels[saved.eligible]
    xa = run_attack(model, x0, y0, cfg, indices=saved.eligible)
    acc = float(np.mean(np.argmax(predict_logits(model, xa), axis=1) == y0))
    linf = np.abs(xa.astype(np.float64) - x0).reshape(len(xa), -1).max(axis=1)
    ball = bool((linf <= cfg.epsilon + 1e-6).all())
    box = bool(xa.min() >= 0 and xa.max() <= 1)
    same = np.array_equal(xa[saved.success], saved.images)
    ok = cfg.kind == "pgd" and cfg.epsilon == 0.03 and cfg.alpha == 0.0075 and cfg.iters == 10 and acc <= 0.10
    report(4, ok and ball and box and same,
           f"PGD eps=0.03 accuracy on {len(x0)} eligible {acc:.4f} (<=0.10); ball {ball}, box {box}, "
           f"saved set reproduced {same}")


def test_c05_shift_direction(artifacts):
    run, model, _, _, parts = artifacts
    adv = load_adversarial_set(run.path("adversarial"))
    clean = parts["test"].images[adv.indices]
    s = layer_shift_stats(model, clean, adv.images)
    margin, se = s.paired_margin()
    n = s.first.n
    report(5, n >= 200 and margin >= 3 * se,
           f"n={n}; mean feature shift {s.feature.mean:.4f} vs first-layer {s.first.mean:.4f}; "
           f"paired margin {margin:.4f} = {margin / se:.1f} SE (>=3)")


def test_c06_error_gap_and_auc(artifacts):
    run, model, reg, th, parts = artifacts
    rep = json.loads(run.path("report.json").read_text())
    sweep = json.loads(run.path("sweep_eps.json").read_text())
    bim = next(e["auc"] for e in sweep["bim"]["entries"] if e["value"] == 0.03)
    fgsm = evaluate(model, reg, th, parts["test"], AttackConfig("fgsm", 0.03)).auc
    aucs = {"fgsm": fgsm, "bim": bim, "pgd": rep["auc"]}
    gap_ok = rep["ea"]["mean"] > rep["ec"]["mean"]
    ok = gap_ok and all(v is not None and v >= 0.90 for v in aucs.values())
    report(6, ok, f"mean e_a {rep['ea']['mean']:.4f} > mean e_c {rep['ec']['mean']:.4f}: {gap_ok}; AUC at eps=0.03 "
                  + ", ".join(f"{k} {v:.4f}" for k, v in aucs.items()) + " (each >=0.90)")


def test_c07_threshold_semantics(artifacts):
    _, model, reg, th, parts = artifacts
    held_out = score(model, reg, None, parts["test"].images)
    fpr = float(np.mean(held_out > th.h))
    boundary = detect(th.h, th) is Verdict.CLEAN
    report(7, th.theta == 95 and th.k == 1000 and 0.03 <= fpr <= 0.07 and boundary,
           f"theta {th.theta:g}, K {th.k}; held-out clean FPR {fpr:.4f} on {len(held_out)} (in [0.03, 0.07]); "
           f"detect(h) is clean: {boundary}")


def test_c08_epsilon_trend(artifacts):
    run = artifacts[0]
    sweep = json.loads(run.path("sweep_eps.json").read_text())
    want = [0.01, 0.03, 0.09, 0.12, 0.15, 0.3]
    parts, ok = [], True
    for kind in ("pgd", "bim"):
        entries = sweep[kind]["entries"]
        curve = {e["value"]: e["auc"] for e in entries}
        ok &= [e["value"] for e in entries] == want and None not in curve.values()
        ok &= curve[0.3] >= curve[0.01]
        parts.append(f"{kind} " + " ".join(f"{k:g}:{v:.3f}" for k, v in curve.items()))
    report(8, ok, "AUC(0.3) >= AUC(0.01); " + "; ".join(parts))


def test_c09_tap_ablation(artifacts):
    run = artifacts[0]
    sweep = json.loads(run.path("sweep_taps.json").read_text())
    aucs = {e["label"]: e["auc"] for e in sweep["entries"]}
    mix = aucs["early-mixture"]
    ok = mix >= aucs["first-layer-only"] and mix >= aucs["last-hidden-only"]
    report(9, ok, "PGD AUC " + ", ".join(f"{k} {v:.4f}" for k, v in aucs.items())
           + " (early-mixture must be >= first-layer-only and last-hidden-only)")


def test_c10_lightweight(artifacts):
    run = artifacts[0]
    b = json.loads(run.path("bench.json").read_text())
    ratio = b["pts_detector_s"] / b["pts_target_s"]
    single = b["single_sample"]["ratio"]
    report(10, ratio <= 0.25,
           f"detector {b['pts_detector_s'] * 1e6:.1f}us vs target {b['pts_target_s'] * 1e6:.1f}us per sample "
           f"(batch {b['batch_size']}): ratio {ratio:.3f} (<=0.25); batch-1 ratio {single:.3f} for reference")


def test_c11_determinism(desk, tmp_path_factory):
    run_a, _ = desk
    out_b = tmp_path_factory.mktemp("desk-b")
    execute(load_config(out=out_b), "pipeline")
    a, b = non_timing_snapshot(run_a.out), non_timing_snapshot(out_b)
    diff = sorted(k for k in set(a) | set(b) if a.get(k) != b.get(k))
    report(11, not diff and len(a) > 10,
           f"{len(a)} non-timing artifacts compared across two full runs; differing: {diff or 'none'}")
