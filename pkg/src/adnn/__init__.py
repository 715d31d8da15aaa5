"""Background subtraction with arithmetic distribution layers."""

from .addist import product_forward, sum_forward
from .estimator import ADNNClassifier
from .histio import FrameSequence, Label, SyntheticConfig, generate_synthetic
from .metrics import Confusion, aggregate, confusion, re_pr_fm
from .refine import RefineConfig, refine

__all__ = [
    "ADNNClassifier",
    "Confusion",
    "FrameSequence",
    "Label",
    "RefineConfig",
    "SyntheticConfig",
    "aggregate",
    "confusion",
    "generate_synthetic",
    "product_forward",
    "re_pr_fm",
    "refine",
    "sum_forward",
]

__version__ = "0.1.0"
