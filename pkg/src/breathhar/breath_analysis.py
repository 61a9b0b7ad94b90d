"""Breath-cycle analysis: peak detection, cycle validation, descriptive
statistics, and channel correlation.

Peak prominence follows the topographic definition: walk outward from a peak
on each side until the signal exceeds the peak height (or the edge), take the
minimum of each stretch, and measure the peak against the higher of the two
bases. Plateaus of equal samples count once, at their midpoint.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Literal

import numpy as np

from .errors import InsufficientDataError, UndefinedCorrelationError, ValidationError

Polarity = Literal["maxima", "minima"]


@dataclass(frozen=True)
class PeakSet:
    indices: np.ndarray      # strictly increasing sample indices
    heights: np.ndarray      # signal values at the peaks
    prominences: np.ndarray  # topographic prominence (in detection polarity)
    spacings: np.ndarray     # seconds between consecutive peaks

    def __post_init__(self):
        if len(self.indices) > 1 and np.any(np.diff(self.indices) <= 0):
            raise ValidationError("peak indices must be strictly increasing")
        expected = max(len(self.indices) - 1, 0)
        if len(self.spacings) != expected:
            raise ValidationError("spacings length must be len(indices) - 1")

    def __len__(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class StatsSummary:
    mean: float
    std: float  # population (divide by n)
    min: float
    max: float
    quartiles: tuple  # (q1, median, q3)
    outlier_fences: tuple  # (q1 - 1.5 IQR, q3 + 1.5 IQR)

    @property
    def value_range(self) -> float:
        return self.max - self.min


@dataclass(frozen=True)
class CorrelationMatrix:
    labels: tuple
    values: np.ndarray

    def __post_init__(self):
        m = self.values
        if m.shape != (len(self.labels), len(self.labels)):
            raise ValidationError("correlation matrix shape must match labels")
        if not np.allclose(m, m.T, atol=1e-12):
            raise ValidationError("correlation matrix must be symmetric")
        if not np.allclose(np.diag(m), 1.0, atol=1e-12):
            raise ValidationError("correlation matrix must have a unit diagonal")


@dataclass(frozen=True)
class BreathCountVerdict:
    passed: bool
    deviation: int
    detected: int
    expected: int


def _plateau_maxima(x: np.ndarray) -> np.ndarray:
    """Indices of local maxima; flat tops count once at their midpoint."""
    n = len(x)
    peaks = []
    i = 1
    while i < n - 1:
        if x[i - 1] < x[i]:
            if x[i] > x[i + 1]:
                peaks.append(i)
            elif x[i] == x[i + 1]:
                j = i
                while j < n - 1 and x[j + 1] == x[i]:
                    j += 1
                if j < n - 1 and x[j + 1] < x[i]:
                    peaks.append((i + j) // 2)
                i = j
        i += 1
    return np.asarray(peaks, dtype=int)


def _prominence(x: np.ndarray, peak: int) -> float:
    h = x[peak]
    left_base = h
    j = peak - 1
    lowest = h
    while j >= 0 and x[j] <= h:
        lowest = min(lowest, x[j])
        j -= 1
    left_base = lowest
    lowest = h
    j = peak + 1
    n = len(x)
    while j < n and x[j] <= h:
        lowest = min(lowest, x[j])
        j += 1
    right_base = lowest
    return float(h - max(left_base, right_base))


def detect_peaks(signal, min_distance_s: float, min_prominence: float,
                 sampling_hz: float, polarity: Polarity = "maxima") -> PeakSet:
    """Local extrema with prominence >= threshold and pairwise spacing
    >= min_distance_s (the more prominent peak wins a conflict).

    Deterministic: prominence ties resolve toward the lower index. A constant
    or empty signal yields an empty PeakSet, not an error.
    """
    if sampling_hz <= 0:
        raise ValidationError(f"sampling_hz must be positive, got {sampling_hz}")
    if min_distance_s < 1.0 / sampling_hz:
        raise ValidationError(
            f"min_distance_s {min_distance_s} is below one sample interval "
            f"{1.0 / sampling_hz}"
        )
    if min_prominence < 0:
        raise ValidationError(f"min_prominence must be >= 0, got {min_prominence}")
    if polarity not in ("maxima", "minima"):
        raise ValidationError(f"polarity must be 'maxima' or 'minima', got {polarity!r}")

    x = np.asarray(signal, dtype=float)
    empty = PeakSet(np.empty(0, int), np.empty(0), np.empty(0), np.empty(0))
    if x.size < 3:
        return empty
    work = x if polarity == "maxima" else -x

    candidates = _plateau_maxima(work)
    if candidates.size == 0:
        return empty
    proms = np.array([_prominence(work, int(i)) for i in candidates])
    keep = proms >= min_prominence
    candidates, proms = candidates[keep], proms[keep]
    if candidates.size == 0:
        return empty

    # Greedy acceptance by descending prominence (index breaks ties).
    min_gap = min_distance_s * sampling_hz - 1e-9
    order = sorted(range(len(candidates)), key=lambda i: (-proms[i], candidates[i]))
    accepted: list[int] = []
    accepted_proms = {}
    for i in order:
        idx = int(candidates[i])
        if all(abs(idx - other) >= min_gap for other in accepted):
            accepted.append(idx)
            accepted_proms[idx] = float(proms[i])
    accepted.sort()

    indices = np.asarray(accepted, dtype=int)
    heights = x[indices]
    prominences = np.array([accepted_proms[i] for i in accepted])
    spacings = np.diff(indices) / sampling_hz if len(indices) > 1 else np.empty(0)
    return PeakSet(indices=indices, heights=heights, prominences=prominences,
                   spacings=spacings)


def validate_breath_count(peaks: PeakSet, expected_count: int, tolerance: int) -> BreathCountVerdict:
    """Pass iff |detected - expected| <= tolerance."""
    if expected_count <= 0:
        raise ValidationError(f"expected_count must be positive, got {expected_count}")
    if tolerance < 0:
        raise ValidationError(f"tolerance must be >= 0, got {tolerance}")
    detected = len(peaks)
    deviation = abs(detected - expected_count)
    return BreathCountVerdict(passed=deviation <= tolerance, deviation=deviation,
                              detected=detected, expected=expected_count)


def summarize(values) -> StatsSummary:
    """Descriptive statistics with population std and linear-interpolated quartiles."""
    x = np.asarray(values, dtype=float)
    x = x[np.isfinite(x)]
    if x.size == 0:
        raise InsufficientDataError("cannot summarize an empty sequence")
    q1, median, q3 = np.percentile(x, [25.0, 50.0, 75.0])
    iqr = q3 - q1
    return StatsSummary(
        mean=float(x.mean()),
        std=float(x.std()),  # 1/n divisor
        min=float(x.min()),
        max=float(x.max()),
        quartiles=(float(q1), float(median), float(q3)),
        outlier_fences=(float(q1 - 1.5 * iqr), float(q3 + 1.5 * iqr)),
    )


def pearson_matrix(channels: Dict[str, np.ndarray]) -> CorrelationMatrix:
    """Pairwise Pearson correlation of equally long, non-constant channels."""
    if len(channels) < 2:
        raise ValidationError("need at least two channels to correlate")
    names = tuple(channels.keys())
    arrays = [np.asarray(channels[name], dtype=float) for name in names]
    length = len(arrays[0])
    if length < 3:
        raise ValidationError("channels must have at least 3 samples")
    for name, arr in zip(names, arrays):
        if len(arr) != length:
            raise ValidationError(f"channel {name!r} length {len(arr)} != {length}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError(f"channel {name!r} contains non-finite values")
        if np.ptp(arr) == 0:
            raise UndefinedCorrelationError(name)
    stacked = np.vstack(arrays)
    matrix = np.corrcoef(stacked)
    matrix = np.clip((matrix + matrix.T) / 2.0, -1.0, 1.0)
    np.fill_diagonal(matrix, 1.0)
    return CorrelationMatrix(labels=names, values=matrix)
