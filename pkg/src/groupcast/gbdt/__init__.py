"""Gradient-boosted trees: binning, training, prediction, attribution."""

from .binning import Binner
from .booster import OBJECTIVES, GbdtModel, TrainConfig, Tree, fit
from .shap import ShapExplanation, expected_value, explain

__all__ = [
    "Binner",
    "OBJECTIVES",
    "GbdtModel",
    "TrainConfig",
    "Tree",
    "fit",
    "ShapExplanation",
    "expected_value",
    "explain",
]
