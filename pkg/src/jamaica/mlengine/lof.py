"""Local outlier factor over a bounded reference set.

For a query ``p`` with k nearest reference neighbours ``N``::

    reach(p, o) = max(kdist(o), d(p, o))
    lrd(p)      = 1 / max(mean_{o in N} reach(p, o), EPS)
    LOF(p)      = mean_{o in N} lrd(o) / lrd(p)

Reference points use the same definitions with themselves excluded from
their own neighbourhoods. Neighbours are exactly k, ordered by distance then
reference position.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import InsufficientTraining, InvalidConfig
from . import kernels
from .features import as_matrix, as_vector

EPS = 1e-12


@dataclass(frozen=True, eq=False)
class LofModel:
    k: int
    dimension: int
    points: np.ndarray = field(repr=False)
    capacity: Optional[int] = None
    normalize: bool = False
    mean: Optional[np.ndarray] = field(default=None, repr=False)
    std: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if not isinstance(self.k, int) or self.k < 1:
            raise InvalidConfig("LOF k must be an integer >= 1")
        if not isinstance(self.dimension, int) or self.dimension < 1:
            raise InvalidConfig("dimension must be an integer >= 1")
        if self.capacity is not None and (not isinstance(self.capacity, int)
                                          or self.capacity <= self.k):
            raise InvalidConfig("capacity must exceed k")
        self.points.setflags(write=False)

    @classmethod
    def empty(cls, k: int, dimension: int = 1, capacity: Optional[int] = None,
              normalize: bool = False) -> "LofModel":
        return cls(k, dimension, np.empty((0, dimension)), capacity, normalize)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def _scaled(self, arr: np.ndarray) -> np.ndarray:
        if not self.normalize or self.mean is None:
            return arr
        return np.ascontiguousarray((arr - self.mean) / self.std)

    def _fitted(self):
        # benign race: concurrent first calls compute the same arrays
        cached = self.__dict__.get("_fit")
        if cached is None:
            ref = self._scaled(self.points)
            kdist, lrd = kernels.fit(ref, self.k, EPS)
            cached = (ref, kdist, lrd)
            object.__setattr__(self, "_fit", cached)
        return cached

    def to_json(self) -> dict:
        return {
            "type": "lof",
            "k": self.k,
            "dimension": self.dimension,
            "capacity": self.capacity,
            "normalize": self.normalize,
            "points": self.points.tolist(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "LofModel":
        model = cls.empty(d["k"], d["dimension"], d.get("capacity"), d.get("normalize", False))
        if d["points"]:
            model = lof_train(model, d["points"])
        return model


def lof_train(model: LofModel, batch) -> LofModel:
    """Append ``batch`` to the reference set, evicting the oldest points past capacity."""
    new = as_matrix(batch, model.dimension)
    points = np.concatenate([model.points, new]) if model.n else new.copy()
    if model.capacity is not None and points.shape[0] > model.capacity:
        points = points[-model.capacity:]
    points = np.ascontiguousarray(points)
    mean = std = None
    if model.normalize and points.shape[0]:
        mean = points.mean(axis=0)
        std = points.std(axis=0)
        std[std == 0] = 1.0
    return LofModel(model.k, model.dimension, points, model.capacity,
                    model.normalize, mean, std)


def _check_scorable(model: LofModel) -> None:
    if model.n <= model.k:
        raise InsufficientTraining(
            f"LOF needs more than k={model.k} reference points, has {model.n}")


def lof_score(model: LofModel, p) -> float:
    return float(lof_score_many(model, [as_vector(p, model.dimension)])[0])


def lof_score_many(model: LofModel, queries) -> np.ndarray:
    _check_scorable(model)
    q = model._scaled(as_matrix(queries, model.dimension))
    ref, kdist, lrd = model._fitted()
    return kernels.score(ref, kdist, lrd, q, model.k, EPS)
