"""Histogram and summary reports over archives or annotation values."""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import JamaicaError


class EmptySource(JamaicaError):
    status, code = 422, "empty_source"


@dataclass(frozen=True)
class HistogramReport:
    bin_edges: list[float]
    counts: list[int]
    total: int
    below: Optional[int] = None
    above: Optional[int] = None
    band: Optional[tuple[float, float]] = None

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("bin_low,bin_high,count\n")
        for lo, hi, c in zip(self.bin_edges, self.bin_edges[1:], self.counts):
            buf.write(f"{lo!r},{hi!r},{c}\n")
        return buf.getvalue()

    def to_text(self, width: int = 50) -> str:
        peak = max(self.counts) or 1
        lines = []
        for lo, hi, c in zip(self.bin_edges, self.bin_edges[1:], self.counts):
            bar = "#" * round(width * c / peak)
            lines.append(f"[{lo:10.3f}, {hi:10.3f}) {c:8d} {bar}")
        lines.append(f"total={self.total}")
        if self.band is not None:
            lines.append(f"band=[{self.band[0]:g}, {self.band[1]:g}] "
                         f"below={self.below} above={self.above}")
        return "\n".join(lines) + "\n"


def _values(values: Sequence[float]) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise EmptySource("no values to report on")
    return arr


def band_counts(arr: np.ndarray, band) -> tuple[Optional[int], Optional[int]]:
    if band is None:
        return None, None
    return int((arr < band[0]).sum()), int((arr > band[1]).sum())


def histogram(values: Sequence[float], bins: int, band: Optional[tuple[float, float]] = None,
              value_range: Optional[tuple[float, float]] = None) -> HistogramReport:
    """Equal-width bins over [min, max], or over ``value_range`` with outliers
    folded into the edge bins so the counts still add up to the input size."""
    if not isinstance(bins, int) or bins < 1:
        raise ValueError("bins must be a positive integer")
    arr = _values(values)
    binned = arr if value_range is None else np.clip(arr, *value_range)
    counts, edges = np.histogram(binned, bins=bins, range=value_range)
    below, above = band_counts(arr, band)
    return HistogramReport([float(e) for e in edges], [int(c) for c in counts],
                           int(arr.size), below, above, band)


def summary(values: Sequence[float], band: Optional[tuple[float, float]] = None) -> dict:
    arr = _values(values)
    below, above = band_counts(arr, band)
    return {"total": int(arr.size), "min": float(arr.min()), "max": float(arr.max()),
            "mean": float(arr.mean()), "below": below, "above": above,
            "band": None if band is None else list(band)}
