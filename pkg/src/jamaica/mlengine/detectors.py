"""Uniform detector/classifier interface the jobs module programs against.

Each wrapper exclusively owns one model value and swaps it for a new one on
training. New algorithms plug in by subclassing and registering a config
``type`` in ``DETECTORS`` / ``CLASSIFIERS``.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from typing import Optional

import numpy as np

from ..errors import InsufficientTraining, InvalidConfig
from .classifier import ClassifierModel, classifier_predict, classifier_train
from .lof import LofModel, lof_score, lof_score_many, lof_train
from .range import RangeModel, range_fit, range_score


def _num(cfg: dict, key: str, default=None, *, positive=False) -> Optional[float]:
    val = cfg.get(key, default)
    if val is None:
        return None
    if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
        raise InvalidConfig(f"{key} must be a finite number")
    if positive and val <= 0:
        raise InvalidConfig(f"{key} must be positive")
    return float(val)


def _int(cfg: dict, key: str, default=None, *, minimum=None) -> Optional[int]:
    val = cfg.get(key, default)
    if val is None:
        return None
    if isinstance(val, bool) or not isinstance(val, int):
        raise InvalidConfig(f"{key} must be an integer")
    if minimum is not None and val < minimum:
        raise InvalidConfig(f"{key} must be >= {minimum}")
    return val


def _bool(cfg: dict, key: str, default: bool) -> bool:
    val = cfg.get(key, default)
    if not isinstance(val, bool):
        raise InvalidConfig(f"{key} must be a boolean")
    return val


class Detector(ABC):
    type: str

    @property
    @abstractmethod
    def min_training(self) -> int: ...

    @abstractmethod
    def train(self, values: np.ndarray) -> None: ...

    @abstractmethod
    def score(self, x: float) -> float: ...

    def score_batch(self, values: np.ndarray) -> np.ndarray:
        return np.array([self.score(v) for v in values], dtype=np.float64)

    @abstractmethod
    def is_anomalous(self, score: float) -> bool: ...

    @abstractmethod
    def confidence(self, score: float, anomalous: bool) -> float: ...

    def observe(self, x: float, score: float) -> None:
        """Hook run after each scored point (online adaptation)."""

    @property
    def sequential(self) -> bool:
        """True when scoring one point changes how the next one is scored."""
        return False

    @abstractmethod
    def snapshot(self) -> dict: ...

    @abstractmethod
    def restore(self, snap: dict) -> None: ...


class LofDetector(Detector):
    type = "lof"

    def __init__(self, cfg: dict):
        self.k = _int(cfg, "k", 5, minimum=1)
        self.capacity = _int(cfg, "capacity", None)
        self.threshold = _num(cfg, "threshold", 1.5, positive=True)
        self.feedback = _bool(cfg, "feedback", False)
        self.normalize = _bool(cfg, "normalize", False)
        if self.capacity is not None and self.capacity <= self.k:
            raise InvalidConfig("capacity must exceed k")
        self.model = LofModel.empty(self.k, 1, self.capacity, self.normalize)
        self._since_snapshot = 0

    @property
    def min_training(self) -> int:
        return self.k + 1

    def train(self, values):
        self.model = lof_train(self.model, np.asarray(values, dtype=np.float64))

    def score(self, x):
        return lof_score(self.model, [x])

    def score_batch(self, values):
        return lof_score_many(self.model, np.asarray(values, dtype=np.float64))

    def is_anomalous(self, score):
        return score > self.threshold

    def confidence(self, score, anomalous):
        c = min(1.0, score / (2.0 * self.threshold))
        return c if anomalous else 1.0 - c

    @property
    def sequential(self):
        return self.feedback

    def observe(self, x, score):
        if self.feedback and not self.is_anomalous(score):
            self.model = lof_train(self.model, [x])

    def snapshot(self):
        return self.model.to_json()

    def restore(self, snap):
        self.model = LofModel.from_json(snap)


class RangeDetector(Detector):
    type = "range"

    def __init__(self, cfg: dict):
        has_bounds = "low" in cfg or "high" in cfg
        has_q = "q_low" in cfg or "q_high" in cfg
        if has_bounds == has_q:
            raise InvalidConfig("range needs either low/high or q_low/q_high")
        self.training: list[float] = []
        if has_bounds:
            low, high = _num(cfg, "low"), _num(cfg, "high")
            if low is None or high is None:
                raise InvalidConfig("range needs both low and high")
            self.q_low = self.q_high = None
            self.model: Optional[RangeModel] = RangeModel(low, high, learned=False)
        else:
            self.q_low, self.q_high = _num(cfg, "q_low"), _num(cfg, "q_high")
            if self.q_low is None or self.q_high is None \
                    or not 0.0 <= self.q_low < self.q_high <= 1.0:
                raise InvalidConfig("need 0 <= q_low < q_high <= 1")
            self.model = None

    @property
    def min_training(self):
        return 0 if self.q_low is None else 10

    def train(self, values):
        if self.q_low is None:
            return
        self.training.extend(float(v) for v in values)
        if self.training:
            self.model = range_fit(self.training, self.q_low, self.q_high)

    def score(self, x):
        if self.model is None:
            raise InsufficientTraining("range bounds not learned yet")
        return range_score(self.model, x)

    def is_anomalous(self, score):
        return score > 0.0

    def confidence(self, score, anomalous):
        # membership of the band is exact, not estimated
        return 1.0

    def snapshot(self):
        snap = {"type": "range", "model": None if self.model is None else self.model.to_json()}
        if self.q_low is not None:
            snap["training"] = list(self.training)
        return snap

    def restore(self, snap):
        self.model = None if snap["model"] is None else RangeModel.from_json(snap["model"])
        self.training = list(snap.get("training", []))


class Classifier(ABC):
    type: str

    @property
    @abstractmethod
    def min_training(self) -> int: ...

    @abstractmethod
    def train(self, examples: list[tuple[float, str]]) -> None: ...

    @abstractmethod
    def predict(self, x: float) -> tuple[str, float]: ...

    @staticmethod
    def confidence(margin: float) -> float:
        return 1.0 - math.exp(-margin)

    @abstractmethod
    def snapshot(self) -> dict: ...

    @abstractmethod
    def restore(self, snap: dict) -> None: ...


class PerceptronClassifier(Classifier):
    type = "perceptron"

    def __init__(self, cfg: dict, classes: list[str]):
        self.epochs = _int(cfg, "epochs", 1, minimum=1)
        weights = cfg.get("weights")
        if weights is not None:
            try:
                self.model = ClassifierModel.from_json(
                    {"classes": classes, "dimension": 1, "weights": weights})
            except (TypeError, ValueError, KeyError) as exc:
                raise InvalidConfig(f"bad preset weights: {exc}") from None
        else:
            self.model = ClassifierModel.zeros(classes, 1)
        self.preset = weights is not None

    @property
    def min_training(self):
        return 0 if self.preset else 1

    def train(self, examples):
        self.model = classifier_train(self.model, [([x], c) for x, c in examples], self.epochs)

    def predict(self, x):
        return classifier_predict(self.model, [x])

    def snapshot(self):
        return self.model.to_json()

    def restore(self, snap):
        self.model = ClassifierModel.from_json(snap)


DETECTORS = {"lof": LofDetector, "range": RangeDetector}
CLASSIFIERS = {"perceptron": PerceptronClassifier}


def detector_from_config(cfg: dict) -> Detector:
    if not isinstance(cfg, dict) or cfg.get("type") not in DETECTORS:
        raise InvalidConfig(f"detector type must be one of {sorted(DETECTORS)}")
    return DETECTORS[cfg["type"]](cfg)


def classifier_from_config(cfg: dict, classes: list[str]) -> Classifier:
    if not isinstance(cfg, dict) or cfg.get("type") not in CLASSIFIERS:
        raise InvalidConfig(f"classifier type must be one of {sorted(CLASSIFIERS)}")
    return CLASSIFIERS[cfg["type"]](cfg, classes)
