"""Hybrid CNN + transformer binary risk classifier on a small numpy autodiff engine."""
from .exceptions import (ConfigurationError, DataFormatError, DimensionError, HybridRiskError,
                         NonFiniteLossError, UsageError)
from .autograd import Tensor, backward, no_grad
from .gradcheck import GradCheckReport, grad_check
from .model import Model, ModelConfig, forward, init_params
from .data import Dataset, SplitSpec, gen_synthetic, load_csv, split, standardize, write_csv
from .training import TrainConfig, fit
from .metrics import ConfusionCounts, MetricsReport, evaluate
from .checkpoint import load_checkpoint, save_checkpoint
from .ablation import run_ablation
from .estimator import HybridRiskClassifier, SequenceStandardizer

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "DataFormatError", "DimensionError", "HybridRiskError",
    "NonFiniteLossError", "UsageError", "Tensor", "backward", "no_grad", "GradCheckReport",
    "grad_check", "Model", "ModelConfig", "forward", "init_params", "Dataset", "SplitSpec",
    "gen_synthetic", "load_csv", "split", "standardize", "write_csv", "TrainConfig", "fit",
    "ConfusionCounts", "MetricsReport", "evaluate", "load_checkpoint", "save_checkpoint",
    "run_ablation", "HybridRiskClassifier", "SequenceStandardizer",
]
