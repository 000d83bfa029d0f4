"""In-process online ML engine: LOF and band detectors, multiclass perceptron."""

from .classifier import ClassifierModel, classifier_predict, classifier_train
from .detectors import (
    Classifier,
    Detector,
    classifier_from_config,
    detector_from_config,
)
from .lof import EPS, LofModel, lof_score, lof_score_many, lof_train
from .range import RangeModel, range_fit, range_score

__all__ = [
    "EPS",
    "Classifier",
    "ClassifierModel",
    "Detector",
    "LofModel",
    "RangeModel",
    "classifier_from_config",
    "classifier_predict",
    "classifier_train",
    "detector_from_config",
    "lof_score",
    "lof_score_many",
    "lof_train",
    "range_fit",
    "range_score",
]
