"""Prompt-pool continual instruction tuning with conflicting-space gradient projection,
on a small frozen attention model and synthetic multimodal tasks."""

from .metrics import AccuracyMatrix, MetricsReport, compute_report
from .prompt_pool import PromptPool, SeparatedPromptPools
from .subspace import ConflictLedger, SubspaceBasis, core_space, estimate_rank
from .synthetic_tasks import Geometry, SuiteConfig, generate_suite
from .tensor_core import NumericalError, svd
from .toy_mllm import AttentionMode, ModelConfig, ToyMLLM
from .trainer import Method, TrainRunConfig, run_method

__version__ = "0.1.0"

__all__ = [
    "AccuracyMatrix", "AttentionMode", "ConflictLedger", "Geometry", "Method", "MetricsReport",
    "ModelConfig", "NumericalError", "PromptPool", "SeparatedPromptPools", "SubspaceBasis",
    "SuiteConfig", "ToyMLLM", "TrainRunConfig", "compute_report", "core_space", "estimate_rank",
    "generate_suite", "run_method", "svd",
]
