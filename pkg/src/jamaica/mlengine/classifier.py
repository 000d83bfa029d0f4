"""Online multiclass perceptron with a bias feature."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from ..errors import EmptyModel, InvalidConfig, UnknownClass
from .features import as_vector


@dataclass(frozen=True)
class ClassifierModel:
    classes: tuple[str, ...]
    weights: tuple[tuple[float, ...], ...]  # one row per class, last entry is the bias
    dimension: int

    @classmethod
    def zeros(cls, classes: Sequence[str], dimension: int = 1) -> "ClassifierModel":
        classes = tuple(classes)
        if len(set(classes)) != len(classes):
            raise InvalidConfig("class names must be unique")
        if dimension < 1:
            raise InvalidConfig("dimension must be >= 1")
        return cls(classes, tuple((0.0,) * (dimension + 1) for _ in classes), dimension)

    def weight(self, name: str) -> tuple[float, ...]:
        return self.weights[self.classes.index(name)]

    def to_json(self) -> dict:
        return {"type": "perceptron", "classes": list(self.classes),
                "dimension": self.dimension, "weights": [list(w) for w in self.weights]}

    @classmethod
    def from_json(cls, d: dict) -> "ClassifierModel":
        weights = tuple(tuple(float(x) for x in w) for w in d["weights"])
        model = cls(tuple(d["classes"]), weights, int(d["dimension"]))
        if len(weights) != len(model.classes) or any(len(w) != model.dimension + 1
                                                       for w in weights):
            raise InvalidConfig("weight matrix does not match classes/dimension")
        return model


def _augment(p, dimension: int) -> list[float]:
    return [float(v) for v in as_vector(p, dimension)] + [1.0]


def _scores(weights, x: list[float]) -> list[float]:
    out = []
    for w in weights:
        s = 0.0
        for wi, xi in zip(w, x):
            s += wi * xi
        out.append(s)
    return out


def _argmax(classes, scores) -> tuple[int, float]:
    best = None
    for i, (name, s) in enumerate(zip(classes, scores)):
        if best is None or s > scores[best] or (s == scores[best] and name < classes[best]):
            best = i
    if len(scores) == 1:
        return best, 0.0
    second = max(s for i, s in enumerate(scores) if i != best)
    return best, scores[best] - second


def classifier_predict(model: ClassifierModel, p) -> tuple[str, float]:
    if not model.classes:
        raise EmptyModel("classifier has no classes")
    x = _augment(p, model.dimension)
    best, margin = _argmax(model.classes, _scores(model.weights, x))
    return model.classes[best], margin


def classifier_train(model: ClassifierModel, examples: Iterable[tuple[object, str]],
                     epochs: int = 1) -> ClassifierModel:
    if not model.classes:
        raise EmptyModel("classifier has no classes")
    if not isinstance(epochs, int) or epochs < 1:
        raise InvalidConfig("epochs must be an integer >= 1")
    prepared = []
    for features, label in examples:
        if label not in model.classes:
            raise UnknownClass(f"unknown class {label!r}")
        prepared.append((_augment(features, model.dimension), model.classes.index(label)))
    weights = [list(w) for w in model.weights]
    for _ in range(epochs):
        for x, truth in prepared:
            guess, _ = _argmax(model.classes, _scores(weights, x))
            if guess != truth:
                wt, wg = weights[truth], weights[guess]
                for i, xi in enumerate(x):
                    wt[i] += xi
                    wg[i] -= xi
    return ClassifierModel(model.classes, tuple(tuple(w) for w in weights), model.dimension)
