"""Series cleanup: threshold outlier removal, imputation, alignment, scaling.

Outlier bounds default to the published per-activity table (authoritative
configuration); they can be recomputed from observed extremes plus the
tolerance margin. The published humidity bounds differ from range +/- margin
by exactly 0.1 on each side -- a known discrepancy of the source tables that
is kept as-is and asserted by the acceptance suite, not silently resolved.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .domain import ActivityLabel, ActivityProfile, LabeledSeries
from .errors import InsufficientDataError, ValidationError

log = logging.getLogger(__name__)


class Channel(str, Enum):
    TEMPERATURE = "temperature"
    HUMIDITY = "humidity"


@dataclass(frozen=True)
class Tolerance:
    """Margins added to observed extremes when building outlier bounds."""

    delta_temp: float = 0.3
    delta_hum: float = 1.1

    def __post_init__(self):
        if self.delta_temp <= 0 or self.delta_hum <= 0:
            raise ValidationError("tolerance margins must be positive")


DEFAULT_TOLERANCE = Tolerance()


@dataclass(frozen=True)
class ThresholdBounds:
    """Per-activity safe ranges; anything strictly outside is an outlier."""

    label: ActivityLabel
    temp_lower: float
    temp_upper: float
    hum_lower: float
    hum_upper: float

    def __post_init__(self):
        if self.temp_lower >= self.temp_upper:
            raise ValidationError(
                f"{self.label.display_name}: temperature bounds inverted "
                f"({self.temp_lower} >= {self.temp_upper})"
            )
        if self.hum_lower >= self.hum_upper:
            raise ValidationError(
                f"{self.label.display_name}: humidity bounds inverted "
                f"({self.hum_lower} >= {self.hum_upper})"
            )


@dataclass(frozen=True)
class ScalingParams:
    """Min-max scaling parameters for one channel."""

    channel: Channel
    x_min: float
    x_max: float

    def __post_init__(self):
        if not self.x_min < self.x_max:
            raise ValidationError(
                f"degenerate scaling for {self.channel}: x_min {self.x_min} >= x_max {self.x_max}"
            )


# Published outlier-detection table (lower/upper per channel).
_TABLE4_ROWS = {
    ActivityLabel.RUNNING: (28.0, 31.0, 71.0, 79.5),
    ActivityLabel.WALKING: (28.6, 31.5, 70.2, 77.3),
    ActivityLabel.SITTING: (30.4, 33.2, 66.4, 71.5),
    ActivityLabel.SLEEPING: (31.1, 33.4, 68.5, 74.8),
}


def table4_bounds() -> dict[ActivityLabel, ThresholdBounds]:
    """The published per-activity outlier bounds (authoritative defaults)."""
    return {
        label: ThresholdBounds(label, *row) for label, row in _TABLE4_ROWS.items()
    }


def compute_bounds(observed_min: float, observed_max: float, delta: float):
    """(observed_min - delta, observed_max + delta)."""
    if observed_min > observed_max:
        raise ValidationError(f"inverted range: {observed_min} > {observed_max}")
    if delta < 0:
        raise ValidationError(f"delta must be >= 0, got {delta}")
    return observed_min - delta, observed_max + delta


def bounds_from_profile(profile: ActivityProfile, tol: Tolerance = DEFAULT_TOLERANCE) -> ThresholdBounds:
    """Recompute bounds from the profile's observed extremes plus tolerance."""
    t_lo, t_hi = compute_bounds(profile.temp_min, profile.temp_max, tol.delta_temp)
    h_lo, h_hi = compute_bounds(profile.hum_min, profile.hum_max, tol.delta_hum)
    return ThresholdBounds(profile.label, t_lo, t_hi, h_lo, h_hi)


def remove_outliers(series: LabeledSeries, bounds: ThresholdBounds):
    """Mark samples missing when either channel falls strictly outside bounds.

    Already-missing values are left as they are and never flagged. Returns
    the masked series and the sorted list of removed indices.
    """
    if series.label is not None and bounds.label != series.label:
        raise ValidationError(
            f"bounds are for {bounds.label.display_name}, series is "
            f"{series.label.display_name}"
        )
    temp = np.array(series.temperature)
    hum = np.array(series.humidity)
    # NaN comparisons are False, so already-missing values never flag.
    with np.errstate(invalid="ignore"):
        bad = (
            (temp < bounds.temp_lower) | (temp > bounds.temp_upper)
            | (hum < bounds.hum_lower) | (hum > bounds.hum_upper)
        )
    removed = np.flatnonzero(bad)
    temp[bad] = np.nan
    hum[bad] = np.nan
    return series.with_channels(temperature=temp, humidity=hum), [int(i) for i in removed]


def _interpolate_channel(timestamps: np.ndarray, values: np.ndarray, name: str):
    """Linear interpolation over missing samples; edge runs extend nearest value."""
    missing = ~np.isfinite(values)
    if not missing.any():
        return values.copy(), 0, 0
    present = np.flatnonzero(~missing)
    if present.size == 0:
        raise InsufficientDataError(f"channel {name!r} has no present samples to interpolate from")
    filled = np.array(values)
    filled[missing] = np.interp(
        timestamps[missing], timestamps[present], values[present]
    )
    edge_runs = int(present[0] > 0) + int(present[-1] < len(values) - 1)
    if edge_runs:
        log.warning(
            "channel %s: %d boundary gap(s) filled by nearest-value extension", name, edge_runs
        )
    return filled, int(missing.sum()), edge_runs


def interpolate_missing(series: LabeledSeries) -> LabeledSeries:
    """Fill every missing sample by linear interpolation between neighbors.

    x(t_k) = x(t_{k-1}) + (x(t_{k+1}) - x(t_{k-1})) / (t_{k+1} - t_{k-1}) * (t_k - t_{k-1})
    using the nearest present neighbors; leading/trailing runs take the
    nearest present value (logged as a warning).
    """
    temp, _, _ = _interpolate_channel(series.timestamps, series.temperature, "temperature")
    hum, _, _ = _interpolate_channel(series.timestamps, series.humidity, "humidity")
    return series.with_channels(temperature=temp, humidity=hum)


def _snap_to_grid(series: LabeledSeries, sampling_hz: float) -> LabeledSeries:
    """Grid alignment only; vacated slots stay marked missing."""
    if sampling_hz <= 0:
        raise ValidationError(f"sampling_hz must be positive, got {sampling_hz}")
    if len(series) == 0:
        return series
    step = 1.0 / sampling_hz
    slots = np.round(series.timestamps * sampling_hz).astype(np.int64)
    lo, hi = int(slots.min()), int(slots.max())
    n_out = hi - lo + 1
    grid = np.arange(lo, hi + 1, dtype=float) * step

    def regrid(values):
        sums = np.zeros(n_out)
        counts = np.zeros(n_out)
        ok = np.isfinite(values)
        np.add.at(sums, slots[ok] - lo, values[ok])
        np.add.at(counts, slots[ok] - lo, 1.0)
        out = np.full(n_out, np.nan)
        hit = counts > 0
        out[hit] = sums[hit] / counts[hit]
        return out

    return LabeledSeries(
        timestamps=grid,
        temperature=regrid(series.temperature),
        humidity=regrid(series.humidity),
        aqi_raw=None if series.aqi_raw is None else regrid(series.aqi_raw),
        label=series.label,
        sampling_hz=sampling_hz,
        subject_id=series.subject_id,
        device_id=series.device_id,
    )


def align_timestamps(series: LabeledSeries, sampling_hz: float) -> LabeledSeries:
    """Snap timestamps to the uniform grid k / sampling_hz.

    Samples rounding to the same slot are averaged per channel; slots left
    vacant between the first and last observation are interpolated. The
    result always satisfies the uniform-grid invariant.
    """
    aligned = _snap_to_grid(series, sampling_hz)
    if len(aligned) == 0 or (
        np.all(np.isfinite(aligned.temperature)) and np.all(np.isfinite(aligned.humidity))
    ):
        return aligned
    return interpolate_missing(aligned)


def min_max_scale(values, params: ScalingParams):
    """(x - x_min) / (x_max - x_min), clamped to [0, 1].

    Returns the scaled array and the count of out-of-range inputs clamped.
    """
    x = np.asarray(values, dtype=float)
    scaled = (x - params.x_min) / (params.x_max - params.x_min)
    with np.errstate(invalid="ignore"):
        clamped = int(np.sum((scaled < 0.0) | (scaled > 1.0)))
    if clamped:
        log.warning("min_max_scale: clamped %d out-of-range values", clamped)
    return np.clip(scaled, 0.0, 1.0), clamped


def min_max_unscale(scaled, params: ScalingParams):
    """Inverse of min_max_scale on the in-range portion."""
    x = np.asarray(scaled, dtype=float)
    return x * (params.x_max - params.x_min) + params.x_min


def fit_scaling(values, channel: Channel) -> ScalingParams:
    """Scaling parameters from observed finite extremes."""
    x = np.asarray(values, dtype=float)
    finite = x[np.isfinite(x)]
    if finite.size == 0:
        raise InsufficientDataError(f"cannot fit scaling for {channel}: no finite values")
    lo, hi = float(finite.min()), float(finite.max())
    if lo == hi:
        raise ValidationError(f"cannot fit scaling for {channel}: constant values")
    return ScalingParams(channel, lo, hi)


@dataclass(frozen=True)
class CleaningReport:
    """Counts emitted by the preprocess stage for the JSON cleaning report."""

    n_input: int
    n_removed: int
    n_imputed: int
    n_boundary_extensions: int
    removed_indices: tuple

    def to_dict(self) -> dict:
        return {
            "n_input": self.n_input,
            "n_removed": self.n_removed,
            "n_imputed": self.n_imputed,
            "n_boundary_extensions": self.n_boundary_extensions,
            "removed_indices": list(self.removed_indices),
        }


def clean_series(series: LabeledSeries, bounds: ThresholdBounds,
                 target_hz: Optional[float] = None) -> tuple[LabeledSeries, CleaningReport]:
    """Full cleanup: outlier removal, grid alignment, interpolation."""
    masked, removed = remove_outliers(series, bounds)
    hz = series.sampling_hz if target_hz is None else target_hz
    gridded = _snap_to_grid(masked, hz)
    temp, imp_t, edge_t = _interpolate_channel(gridded.timestamps, gridded.temperature, "temperature")
    hum, imp_h, edge_h = _interpolate_channel(gridded.timestamps, gridded.humidity, "humidity")
    cleaned = gridded.with_channels(temperature=temp, humidity=hum)
    report = CleaningReport(
        n_input=len(series),
        n_removed=len(removed),
        n_imputed=imp_t + imp_h,
        n_boundary_extensions=edge_t + edge_h,
        removed_indices=tuple(removed),
    )
    return cleaned, report
