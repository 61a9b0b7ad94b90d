"""Shared vocabulary: activity labels, sensor samples, series, and activity profiles.

All types are immutable after construction and safe to hand between threads.
Missing readings inside a series are marked per channel with NaN; no sentinel
magnitudes (e.g. -999) are ever used.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Iterator, Optional

import numpy as np

from .errors import ValidationError

log = logging.getLogger(__name__)

# AHT10-class sensor physical envelope.
TEMP_MIN_C = -40.0
TEMP_MAX_C = 85.0

# Timestamps on a uniform grid must agree with k/sampling_hz to this tolerance.
GRID_TOL_S = 1e-9


class ActivityLabel(IntEnum):
    """The four monitored activity states.

    Integer codes are stable (0-3 in this order) and double as the
    deterministic tie-break order for classifiers.
    """

    RUNNING = 0
    WALKING = 1
    SITTING = 2
    SLEEPING = 3

    @classmethod
    def from_name(cls, name: str) -> "ActivityLabel":
        try:
            return cls[str(name).strip().upper()]
        except KeyError:
            raise ValidationError(f"unknown activity label: {name!r}") from None

    @property
    def display_name(self) -> str:
        return self.name.capitalize()


@dataclass(frozen=True)
class SensorSample:
    """One timestamped reading from one device.

    NaN temperature/humidity marks a missing reading. Humidity outside
    [0, 100] is clamped (synthetic noise can overshoot); the clamp is logged.
    """

    timestamp: float
    temperature: float
    humidity: float
    aqi_raw: Optional[float] = None
    device_id: str = "dev-00"

    def __post_init__(self):
        if not math.isfinite(self.timestamp) or self.timestamp < 0:
            raise ValidationError(f"timestamp must be finite and >= 0, got {self.timestamp}")
        if math.isfinite(self.temperature) and not (TEMP_MIN_C <= self.temperature <= TEMP_MAX_C):
            raise ValidationError(
                f"temperature {self.temperature} outside sensor envelope "
                f"[{TEMP_MIN_C}, {TEMP_MAX_C}]"
            )
        if math.isfinite(self.humidity) and not (0.0 <= self.humidity <= 100.0):
            clamped = min(100.0, max(0.0, self.humidity))
            log.warning("humidity %.3f clamped to %.1f", self.humidity, clamped)
            object.__setattr__(self, "humidity", clamped)


def _as_float_array(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float)  # always copy; series own their storage
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be one-dimensional")
    return arr


@dataclass(frozen=True)
class LabeledSeries:
    """A per-activity time series of mask sensor readings.

    Channels are stored as parallel arrays; NaN marks a missing value in one
    channel without disturbing the other. ``label`` is None for raw ingested
    streams whose activity is not yet known.
    """

    timestamps: np.ndarray
    temperature: np.ndarray
    humidity: np.ndarray
    aqi_raw: Optional[np.ndarray]
    label: Optional[ActivityLabel]
    sampling_hz: float
    subject_id: str = "s00"
    device_id: str = "dev-00"

    def __post_init__(self):
        ts = _as_float_array(self.timestamps, "timestamps")
        temp = _as_float_array(self.temperature, "temperature")
        hum = _as_float_array(self.humidity, "humidity")
        aqi = None if self.aqi_raw is None else _as_float_array(self.aqi_raw, "aqi_raw")
        n = len(ts)
        if len(temp) != n or len(hum) != n or (aqi is not None and len(aqi) != n):
            raise ValidationError("all channels must have the same length")
        if self.sampling_hz <= 0 or not math.isfinite(self.sampling_hz):
            raise ValidationError(f"sampling_hz must be positive, got {self.sampling_hz}")
        if n:
            if not np.all(np.isfinite(ts)) or ts[0] < 0:
                raise ValidationError("timestamps must be finite and non-negative")
            if np.any(np.diff(ts) <= 0):
                bad = int(np.argmax(np.diff(ts) <= 0)) + 1
                raise ValidationError(f"timestamps not strictly increasing at index {bad}")
        finite_t = temp[np.isfinite(temp)]
        if finite_t.size and (finite_t.min() < TEMP_MIN_C or finite_t.max() > TEMP_MAX_C):
            raise ValidationError("temperature outside sensor envelope [-40, 85]")
        finite_h = hum[np.isfinite(hum)]
        if finite_h.size and (finite_h.min() < 0.0 or finite_h.max() > 100.0):
            n_clamped = int(np.sum((hum < 0.0) | (hum > 100.0)))
            log.warning("clamping %d humidity values into [0, 100]", n_clamped)
            hum = np.clip(hum, 0.0, 100.0)
        for name, arr in (("timestamps", ts), ("temperature", temp), ("humidity", hum)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if aqi is not None:
            aqi.setflags(write=False)
        object.__setattr__(self, "aqi_raw", aqi)

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def duration_s(self) -> float:
        if len(self) < 2:
            return 0.0
        return float(self.timestamps[-1] - self.timestamps[0])

    def is_uniform(self) -> bool:
        """True when consecutive timestamps differ by exactly 1/sampling_hz."""
        if len(self) < 2:
            return True
        step = 1.0 / self.sampling_hz
        return bool(np.all(np.abs(np.diff(self.timestamps) - step) <= GRID_TOL_S))

    @property
    def samples(self) -> Iterator[SensorSample]:
        aqi = self.aqi_raw
        for i in range(len(self)):
            yield SensorSample(
                timestamp=float(self.timestamps[i]),
                temperature=float(self.temperature[i]),
                humidity=float(self.humidity[i]),
                aqi_raw=None if aqi is None else float(aqi[i]),
                device_id=self.device_id,
            )

    def with_channels(self, temperature=None, humidity=None, timestamps=None) -> "LabeledSeries":
        """Copy with replaced channel arrays (validation re-runs)."""
        return replace(
            self,
            timestamps=self.timestamps if timestamps is None else timestamps,
            temperature=self.temperature if temperature is None else temperature,
            humidity=self.humidity if humidity is None else humidity,
        )


@dataclass(frozen=True)
class ActivityProfile:
    """Per-activity statistics for both channels plus the expected breath rate."""

    label: ActivityLabel
    temp_mean: float
    temp_std: float
    temp_min: float
    temp_max: float
    hum_mean: float
    hum_std: float
    hum_min: float
    hum_max: float
    breath_rate_hz: float

    def __post_init__(self):
        if not (self.temp_min <= self.temp_mean <= self.temp_max):
            raise ValidationError(
                f"{self.label.display_name}: temperature min <= mean <= max violated "
                f"({self.temp_min}, {self.temp_mean}, {self.temp_max})"
            )
        if not (self.hum_min <= self.hum_mean <= self.hum_max):
            raise ValidationError(
                f"{self.label.display_name}: humidity min <= mean <= max violated "
                f"({self.hum_min}, {self.hum_mean}, {self.hum_max})"
            )
        if self.temp_std <= 0 or self.hum_std <= 0:
            raise ValidationError(f"{self.label.display_name}: std must be positive")
        if self.breath_rate_hz <= 0:
            raise ValidationError(f"{self.label.display_name}: breath_rate_hz must be positive")

    @property
    def breath_period_s(self) -> float:
        return 1.0 / self.breath_rate_hz


# Published per-activity statistics. Breath rates are package defaults ordered
# by activity intensity (the source protocol counted breaths manually but never
# published per-session counts); all stay below the 0.5 Hz limit of 1 Hz data.
_PROFILE_ROWS = {
    ActivityLabel.RUNNING: dict(
        temp_mean=29.5, temp_std=1.2, temp_min=28.3, temp_max=30.7,
        hum_mean=75.2, hum_std=2.1, hum_min=72.0, hum_max=78.5,
        breath_rate_hz=0.45,
    ),
    ActivityLabel.WALKING: dict(
        temp_mean=30.1, temp_std=1.1, temp_min=28.9, temp_max=31.2,
        hum_mean=73.5, hum_std=1.8, hum_min=71.2, hum_max=76.3,
        breath_rate_hz=0.33,
    ),
    ActivityLabel.SITTING: dict(
        temp_mean=31.8, temp_std=0.9, temp_min=30.7, temp_max=32.9,
        hum_mean=68.9, hum_std=1.5, hum_min=67.4, hum_max=70.5,
        breath_rate_hz=0.25,
    ),
    ActivityLabel.SLEEPING: dict(
        temp_mean=32.3, temp_std=0.8, temp_min=31.4, temp_max=33.1,
        hum_mean=71.2, hum_std=1.7, hum_min=69.5, hum_max=73.8,
        breath_rate_hz=0.20,
    ),
}


def default_profiles() -> dict[ActivityLabel, ActivityProfile]:
    """The four activity profiles with published statistics."""
    return {
        label: ActivityProfile(label=label, **row) for label, row in _PROFILE_ROWS.items()
    }
