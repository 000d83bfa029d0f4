"""Synthetic PM10 experiment: nominal training data plus a stream with faults.

Stream rows are assigned to classes deterministically (exactly
``floor(frac * n)`` negative and high rows), shuffled with the seed, and
spaced ``interval_s`` apart across a pool of sensors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadSpec
from .ids import parse_ts
from .ingest import write_archive
from .jobs import Observation

LONDON = (51.5072, -0.1276)
NEGATIVE_RANGE = (-10.0, -0.1)
HIGH_SPAN = 50.0
YEAR_MS = 365 * 24 * 3600 * 1000


@dataclass(frozen=True)
class SynthSpec:
    n_train: int = 1000
    n_stream: int = 40000
    nominal_band: tuple[float, float] = (5.0, 45.0)
    frac_negative: float = 0.05
    frac_high: float = 0.03
    seed: int = 42
    limit: float = 50.0  # high faults are drawn from (limit, limit + 50]
    sensors: int = 10
    interval_s: float = 150.0  # 6 rows per 15 minutes
    attribute: str = "PM10"
    entity_type: str = "AirQualityObserved"
    id_prefix: str = "urn:oc:e:london:"
    start: str = "2016-06-01T00:00:00.000Z"

    def validate(self) -> None:
        if self.n_train <= 0 or self.n_stream <= 0 or self.sensors <= 0:
            raise BadSpec("n_train, n_stream and sensors must be positive")
        if self.frac_negative < 0 or self.frac_high < 0:
            raise BadSpec("fractions must be non-negative")
        if self.frac_negative + self.frac_high >= 1:
            raise BadSpec("frac_negative + frac_high must be below 1")
        low, high = self.nominal_band
        if not low < high:
            raise BadSpec("nominal band needs low < high")
        if self.interval_s <= 0:
            raise BadSpec("interval_s must be positive")

    @property
    def n_negative(self) -> int:
        return exact_floor(self.frac_negative * self.n_stream)

    @property
    def n_high(self) -> int:
        return exact_floor(self.frac_high * self.n_stream)


def exact_floor(x: float) -> int:
    # 0.03 * 40000 is 1199.9999999999998 in binary floating point
    return math.floor(round(x, 9))


def generate(spec: SynthSpec) -> tuple[list[Observation], list[Observation]]:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    low, high = spec.nominal_band
    start = parse_ts(spec.start)

    offsets = rng.uniform(-0.05, 0.05, size=(spec.sensors, 2))
    locations = [(round(LONDON[0] + float(a), 6), round(LONDON[1] + float(b), 6))
                 for a, b in offsets]
    ids = [f"{spec.id_prefix}{i}" for i in range(spec.sensors)]

    train_vals = rng.uniform(low, high, spec.n_train)
    step = YEAR_MS // spec.n_train
    train = [Observation(ids[i % spec.sensors], spec.attribute, float(v),
                         start - YEAR_MS + i * step, locations[i % spec.sensors],
                         spec.entity_type)
             for i, v in enumerate(train_vals)]

    n_neg, n_high = spec.n_negative, spec.n_high
    kinds = np.zeros(spec.n_stream, dtype=np.int8)
    kinds[:n_neg] = 1
    kinds[n_neg:n_neg + n_high] = 2
    kinds = rng.permutation(kinds)
    nominal = rng.uniform(low, high, spec.n_stream)
    negative = rng.uniform(*NEGATIVE_RANGE, spec.n_stream)
    over = spec.limit + HIGH_SPAN * (1.0 - rng.random(spec.n_stream))  # (limit, limit+50]
    values = np.where(kinds == 1, negative, np.where(kinds == 2, over, nominal))

    interval_ms = int(round(spec.interval_s * 1000))
    stream = [Observation(ids[i % spec.sensors], spec.attribute, float(v),
                          start + i * interval_ms, locations[i % spec.sensors],
                          spec.entity_type)
              for i, v in enumerate(values)]
    return train, stream


def write(spec: SynthSpec, out_dir: str | Path) -> tuple[Path, Path]:
    """Write ``train.csv`` and ``stream.csv`` into ``out_dir``."""
    train, stream = generate(spec)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_path, stream_path = out / "train.csv", out / "stream.csv"
    write_archive(train_path, train)
    write_archive(stream_path, stream)
    return train_path, stream_path
