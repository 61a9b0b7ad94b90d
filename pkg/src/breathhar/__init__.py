"""Breath-driven human activity recognition toolkit."""

__version__ = "0.1.0"

from .domain import ActivityLabel, ActivityProfile, LabeledSeries, SensorSample, default_profiles

__all__ = [
    "ActivityLabel",
    "ActivityProfile",
    "LabeledSeries",
    "SensorSample",
    "default_profiles",
    "__version__",
]
