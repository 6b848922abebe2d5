"""Platform-level runtime estimator."""

from .features import FeatureVector, Normalizer, featurize, fit_normalizer
from .kernels import BACKEND
from .model import Prediction, PredictorParams, forward, load_params, save_params

__all__ = [
    "BACKEND",
    "FeatureVector",
    "Normalizer",
    "Prediction",
    "PredictorParams",
    "featurize",
    "fit_normalizer",
    "forward",
    "load_params",
    "save_params",
]
