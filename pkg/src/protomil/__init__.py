"""Prototype-anchored multimodal multiple-instance learning at desk scale.

A numpy/scipy library implementing the full pipeline: sinusoidal spatial
encoding of patch coordinates, dual-expert prototype routing with K-means
teacher anchors, text-conditioned feature modulation with attention
propagation, and joint classification / survival objectives trained with
hand-derived, finite-difference-verified gradients on synthetic cohorts.
"""

__version__ = "0.1.0"

from .config import TrainConfig
from .losses import SurvivalRecord
from .metrics import MetricReport
from .model import Model
from .priors import PrototypeBank, kmeans
from .synthdata import Bag, GeneratorConfig, generate_cohort, load_cohort, \
    save_cohort, split_cohort
from .trainer import TrainResult, evaluate, full_model_grad_check, train

__all__ = [
    "TrainConfig", "SurvivalRecord", "MetricReport", "Model",
    "PrototypeBank", "kmeans", "Bag", "GeneratorConfig", "generate_cohort",
    "load_cohort", "save_cohort", "split_cohort", "TrainResult", "evaluate",
    "full_model_grad_check", "train", "__version__",
]
