"""Layer-regression adversarial-example detection at desk scale."""
__version__ = "0.1.0"

from .attacks import AdversarialSet, AttackConfig, attack_fgsm, attack_iterative, build_adversarial_set
from .data import Dataset, SplitPlan, generate_synthetic, load_idx, split
from .detector import (DetectorConfig, Regressor, TapSpec, Threshold, Verdict, calibrate_threshold, detect,
                       extract_v, score, train_regressor)
from .evaluation import EvalReport, auc, bench_pts, roc_curve, sweep_epsilon, sweep_taps
from .kernels import BACKEND
from .nn import ModelGraph, build_model, desk_spec, forward_with_taps, load_checkpoint, save_checkpoint, train_classifier
from .rng import Rng
from .tensor import Tape, Tensor, backward

__all__ = [
    "AdversarialSet", "AttackConfig", "BACKEND", "Dataset", "DetectorConfig", "EvalReport", "ModelGraph",
    "Regressor", "Rng", "SplitPlan", "TapSpec", "Tape", "Tensor", "Threshold", "Verdict", "attack_fgsm",
    "attack_iterative", "auc", "backward", "bench_pts", "build_adversarial_set", "build_model",
    "calibrate_threshold", "desk_spec", "detect", "extract_v", "forward_with_taps", "generate_synthetic",
    "load_checkpoint", "load_idx", "roc_curve", "save_checkpoint", "score", "split", "sweep_epsilon",
    "sweep_taps", "train_classifier", "train_regressor",
]
