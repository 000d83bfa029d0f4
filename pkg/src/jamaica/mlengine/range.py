"""Band detector: anything outside [low, high] is anomalous."""

from __future__ import annotations

import math
from dataclasses import dataclass

from ..errors import BadQuantiles, DegenerateRange, EmptyBatch, InvalidConfig, NonFiniteFeature


@dataclass(frozen=True)
class RangeModel:
    low: float
    high: float
    learned: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.low) and math.isfinite(self.high)):
            raise InvalidConfig("range bounds must be finite")
        if self.low > self.high:
            raise InvalidConfig(f"range low {self.low} exceeds high {self.high}")

    def to_json(self) -> dict:
        return {"type": "range", "low": self.low, "high": self.high, "learned": self.learned}

    @classmethod
    def from_json(cls, d: dict) -> "RangeModel":
        return cls(float(d["low"]), float(d["high"]), bool(d.get("learned", False)))


def nearest_rank(sorted_values, q: float) -> float:
    n = len(sorted_values)
    rank = max(1, math.ceil(q * n))
    return sorted_values[min(rank, n) - 1]


def range_fit(batch, q_low: float, q_high: float) -> RangeModel:
    values = sorted(float(v) for v in batch)
    if not values:
        raise EmptyBatch("cannot fit a range on an empty batch")
    if not all(math.isfinite(v) for v in values):
        raise NonFiniteFeature("range training values must be finite")
    if not (0.0 <= q_low < q_high <= 1.0):
        raise BadQuantiles(f"need 0 <= q_low < q_high <= 1, got {q_low}, {q_high}")
    return RangeModel(nearest_rank(values, q_low), nearest_rank(values, q_high), learned=True)


def range_score(model: RangeModel, x: float) -> float:
    """0 inside the band, otherwise the exceedance normalised by the band width."""
    if model.low <= x <= model.high:
        return 0.0
    width = model.high - model.low
    if width == 0:
        raise DegenerateRange("zero-width band cannot normalise an exceedance")
    if x > model.high:
        return (x - model.high) / width
    return (model.low - x) / width
