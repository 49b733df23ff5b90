"""Convex, difference-of-convex and Bregman-divergence fitting by ADMM."""
from .numerics import Dataset, NormalizationState, NumericsError, normalize
from .model import (
    BregmanModel, DcModel, MaxAffineModel, ModelError, bregman_divergence, dc_evaluate,
    evaluate, load, predict_knn, predict_knn_batch, save,
)
from .convex_fit import DivergenceError, EarlyStop, FitConfig, FitReport, fit_convex
from .dc_fit import fit_dc
from .bregman_fit import fit_bregman

__version__ = "0.1.0"

__all__ = [
    "Dataset", "NormalizationState", "NumericsError", "normalize",
    "BregmanModel", "DcModel", "MaxAffineModel", "ModelError", "bregman_divergence", "dc_evaluate",
    "evaluate", "load", "predict_knn", "predict_knn_batch", "save",
    "DivergenceError", "EarlyStop", "FitConfig", "FitReport", "fit_convex", "fit_dc", "fit_bregman",
]
