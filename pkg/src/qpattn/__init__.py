"""Quantum parameterized attention: scoring circuit, verification lab,
minimal trainable vision transformer and experiment harness."""

from .circuit import QpaParams, ScoreGradient, score, score_encoding_only, score_gradient
from .data import ImageDataset, SyntheticSpec, load_idx, split, synthetic_dataset
from .lab import RankReport, run_claims
from .scorers import SCORER_KINDS
from .training import Metrics, TrainConfig, TTestResult, paired_t_test, train_loop
from .vit import VitConfig, VitModel, init_model

__version__ = "0.1.0"

__all__ = [
    "QpaParams",
    "ScoreGradient",
    "score",
    "score_encoding_only",
    "score_gradient",
    "ImageDataset",
    "SyntheticSpec",
    "load_idx",
    "split",
    "synthetic_dataset",
    "RankReport",
    "run_claims",
    "SCORER_KINDS",
    "Metrics",
    "TrainConfig",
    "TTestResult",
    "paired_t_test",
    "train_loop",
    "VitConfig",
    "VitModel",
    "init_model",
    "__version__",
]
