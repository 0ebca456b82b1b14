"""From-scratch numpy CNN stack."""

from .layers import NumericalError, Param
from .models import Architecture, Classifier, ModelSpec, Variant, build_classifier, build_model
from .train import TrainConfig, evaluate, sgd_momentum_step, train

__all__ = [
    "Architecture", "Classifier", "ModelSpec", "NumericalError", "Param", "TrainConfig",
    "Variant", "build_classifier", "build_model", "evaluate", "sgd_momentum_step", "train",
]
