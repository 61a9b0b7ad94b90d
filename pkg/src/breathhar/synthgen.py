"""Synthetic labeled breath series generation.

Each breath cycle appears as a rounded Gaussian bump riding on the activity's
baseline; humidity bumps are phase-aligned with temperature bumps (exhalation
raises both). Amplitude and offset are calibrated per channel so the sample
mean and standard deviation land on the activity profile while every normal
sample stays inside the profile range; values outside the range occur only
through explicitly injected anomalies, whose ground truth is logged for the
preprocessing tests.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .domain import ActivityLabel, ActivityProfile, LabeledSeries, default_profiles
from .errors import InsufficientDataError, ValidationError

# Bump width as a fraction of the breath period.
BUMP_SIGMA_FRACTION = 0.2

# Fraction of profile std used for additive Gaussian noise when not overridden.
DEFAULT_NOISE_FRACTION = 0.3

# AQI channel is an opaque placeholder: constant baseline plus noise.
AQI_BASELINE = 150.0
AQI_NOISE_STD = 2.0

_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite.hermgauss(21)


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for the generator; rates are per-sample probabilities."""

    profiles: dict[ActivityLabel, ActivityProfile] = field(default_factory=default_profiles)
    duration_s: float = 1800.0
    sampling_hz: float = 1.0
    noise_std_temp: Optional[float] = None  # None: 0.3 x profile temp_std
    noise_std_hum: Optional[float] = None   # None: 0.3 x profile hum_std
    drift_slope_temp: float = 0.0
    drift_slope_hum: float = 0.0
    outlier_rate: float = 0.0
    gap_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ValidationError(f"duration_s must be positive, got {self.duration_s}")
        if self.sampling_hz <= 0:
            raise ValidationError(f"sampling_hz must be positive, got {self.sampling_hz}")
        for name in ("outlier_rate", "gap_rate"):
            rate = getattr(self, name)
            if not (0.0 <= rate < 1.0):
                raise ValidationError(f"{name} must be in [0, 1), got {rate}")
        for name in ("noise_std_temp", "noise_std_hum"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise ValidationError(f"{name} must be >= 0, got {value}")


def gaussian_bump(t, mu: float, sigma: float):
    """Rounded impulse exp(-(t-mu)^2 / (2 sigma^2)); peak value 1 at t = mu."""
    if sigma <= 0:
        raise ValidationError(f"sigma must be positive, got {sigma}")
    t = np.asarray(t, dtype=float)
    out = np.exp(-((t - mu) ** 2) / (2.0 * sigma * sigma))
    return float(out) if out.ndim == 0 else out


def bump_train(t: np.ndarray, period_s: float, sigma_s: float,
               center_offset_s: float = 0.0) -> np.ndarray:
    """Periodic train of unit bumps centered at (k + 1/2) * period + offset."""
    phase = np.mod(np.asarray(t, dtype=float) - center_offset_s, period_s)
    total = np.zeros_like(phase)
    # Neighbors two periods out contribute < exp(-28) at sigma = 0.2 * period.
    for j in range(-2, 3):
        total += np.exp(-((phase - (j + 0.5) * period_s) ** 2) / (2.0 * sigma_s * sigma_s))
    return total


def breath_count_ground_truth(duration_s: float, breath_rate_hz: float,
                              sampling_hz: Optional[float] = None) -> int:
    """Number of bump centers the generator places in [0, duration)."""
    offset = 0.0 if sampling_hz is None else 0.5 / sampling_hz
    period = 1.0 / breath_rate_hz
    return int(np.floor((duration_s - offset) / period + 0.5))


def derive_seed(seed: int, label: ActivityLabel, subject: int, stream: int = 0) -> np.random.Generator:
    """Independent generator per (seed, label, subject, stream)."""
    return np.random.default_rng(np.random.SeedSequence((seed, int(label), subject, stream)))


def _subject_stream_key(subject_id: str) -> int:
    digest = hashlib.blake2s(subject_id.encode("utf-8"), digest_size=4).digest()
    return int.from_bytes(digest, "little")


def _clipped_moments(det: np.ndarray, noise_std: float, lo: float, hi: float):
    """Mean and std of clip(det + eps, lo, hi), eps ~ N(0, noise_std).

    Gauss-Hermite quadrature over the noise; exact over the supplied
    deterministic sample values. Fully deterministic (no RNG).
    """
    if noise_std <= 0:
        x = np.clip(det, lo, hi)
        return float(x.mean()), float(x.std())
    shifts = np.sqrt(2.0) * noise_std * _GH_NODES
    w = _GH_WEIGHTS / np.sqrt(np.pi)
    x = np.clip(det[None, :] + shifts[:, None], lo, hi)
    m1 = float(np.sum(w * x.mean(axis=1)))
    m2 = float(np.sum(w * (x * x).mean(axis=1)))
    var = max(m2 - m1 * m1, 0.0)
    return m1, float(np.sqrt(var))


def _calibrate_channel(train: np.ndarray, drift: np.ndarray, noise_std: float,
                       mean_target: float, std_target: float, lo: float, hi: float):
    """Find bump amplitude and offset so the clipped signal hits the profile.

    The clipped std grows monotonically with amplitude up to a saturation
    limit of about half the profile range; when the published std exceeds
    what the range allows, the calibration settles just below the limit.
    """
    centered = train - train.mean()
    spread = centered.max() - centered.min()
    if spread <= 0:
        return 0.0, float(np.clip(mean_target, lo, hi))
    a_hi = 8.0 * (hi - lo) / spread

    def moments(amp, offset):
        return _clipped_moments(offset + amp * centered + drift, noise_std, lo, hi)

    def solve_offset(amp, offset):
        for _ in range(6):
            m1, _ = moments(amp, offset)
            offset += mean_target - m1
        return offset

    offset = mean_target
    offset_hi = solve_offset(a_hi, offset)
    _, std_max = moments(a_hi, offset_hi)
    target = min(std_target, 0.995 * std_max)

    a_lo = 0.0
    for _ in range(40):
        amp = 0.5 * (a_lo + a_hi)
        offset = solve_offset(amp, offset)
        _, s = moments(amp, offset)
        if s < target:
            a_lo = amp
        else:
            a_hi = amp
    amp = 0.5 * (a_lo + a_hi)
    offset = solve_offset(amp, offset)
    return amp, offset


def synthesize_series(label: ActivityLabel, cfg: SynthConfig, subject: int = 0) -> LabeledSeries:
    """Generate one labeled series matching the activity profile statistics.

    Deterministic for a fixed (cfg.seed, label, subject). Raises when the
    duration covers fewer than three breath cycles or the breath rate is not
    representable at the sampling rate.
    """
    if label not in cfg.profiles:
        raise ValidationError(f"no profile configured for {label!r}")
    profile = cfg.profiles[label]
    period = profile.breath_period_s
    if cfg.duration_s < 3.0 * period:
        raise InsufficientDataError(
            f"duration {cfg.duration_s} s covers fewer than 3 breath periods ({period} s)"
        )
    if profile.breath_rate_hz >= cfg.sampling_hz / 2.0:
        raise ValidationError(
            f"breath rate {profile.breath_rate_hz} Hz is not below the Nyquist limit "
            f"of {cfg.sampling_hz / 2.0} Hz"
        )

    n = int(round(cfg.duration_s * cfg.sampling_hz))
    t = np.arange(n, dtype=float) / cfg.sampling_hz
    # Half-sample center offset keeps sampled phases bimodal even when the
    # breath period is an even multiple of the sample interval.
    train = bump_train(t, period, BUMP_SIGMA_FRACTION * period,
                       center_offset_s=0.5 / cfg.sampling_hz)

    noise_temp = (DEFAULT_NOISE_FRACTION * profile.temp_std
                  if cfg.noise_std_temp is None else cfg.noise_std_temp)
    noise_hum = (DEFAULT_NOISE_FRACTION * profile.hum_std
                 if cfg.noise_std_hum is None else cfg.noise_std_hum)

    t_centered = t - t.mean()
    drift_temp = cfg.drift_slope_temp * t_centered
    drift_hum = cfg.drift_slope_hum * t_centered

    # Calibrate on a strided subsample (deterministic, duration-independent cost).
    k = min(n, 4096)
    idx = np.unique(np.linspace(0, n - 1, k).round().astype(int))
    amp_t, off_t = _calibrate_channel(train[idx], drift_temp[idx], noise_temp,
                                      profile.temp_mean, profile.temp_std,
                                      profile.temp_min, profile.temp_max)
    amp_h, off_h = _calibrate_channel(train[idx], drift_hum[idx], noise_hum,
                                      profile.hum_mean, profile.hum_std,
                                      profile.hum_min, profile.hum_max)

    rng = derive_seed(cfg.seed, label, subject, stream=0)
    centered = train - train.mean()
    temp = off_t + amp_t * centered + drift_temp
    hum = off_h + amp_h * centered + drift_hum
    if noise_temp > 0:
        temp = temp + rng.normal(0.0, noise_temp, n)
    if noise_hum > 0:
        hum = hum + rng.normal(0.0, noise_hum, n)
    temp = np.clip(temp, profile.temp_min, profile.temp_max)
    hum = np.clip(hum, profile.hum_min, profile.hum_max)
    aqi = AQI_BASELINE + rng.normal(0.0, AQI_NOISE_STD, n)

    subject_id = f"s{subject:02d}"
    return LabeledSeries(
        timestamps=t,
        temperature=temp,
        humidity=hum,
        aqi_raw=aqi,
        label=label,
        sampling_hz=cfg.sampling_hz,
        subject_id=subject_id,
        device_id=f"mask-{subject_id}",
    )


def inject_anomalies(series: LabeledSeries, cfg: SynthConfig):
    """Inject spikes past the outlier thresholds and gaps (missing samples).

    Returns the corrupted series plus a ground-truth log of (index, kind)
    with kind one of 'spike_temp', 'spike_hum', 'gap'. Spikes land at least
    two tolerance margins beyond the activity's outlier bounds; first and
    last samples are never touched so interpolation stays well posed.
    """
    from .preprocess import DEFAULT_TOLERANCE, table4_bounds

    if series.label is None:
        raise ValidationError("anomaly injection needs a labeled series")
    if cfg.outlier_rate == 0.0 and cfg.gap_rate == 0.0:
        return series, []

    bounds = table4_bounds()[series.label]
    tol = DEFAULT_TOLERANCE
    rng = np.random.default_rng(np.random.SeedSequence(
        (cfg.seed, int(series.label), _subject_stream_key(series.subject_id), 1)
    ))

    n = len(series)
    u = rng.random(n)
    spike_mask = u < cfg.outlier_rate
    gap_mask = (~spike_mask) & (u < cfg.outlier_rate + cfg.gap_rate)
    spike_mask[[0, n - 1]] = False
    gap_mask[[0, n - 1]] = False

    temp = np.array(series.temperature)
    hum = np.array(series.humidity)
    log_entries = []
    for i in np.flatnonzero(spike_mask):
        on_temp = rng.random() < 0.5
        upward = rng.random() < 0.5
        if on_temp:
            delta, lo, hi = tol.delta_temp, bounds.temp_lower, bounds.temp_upper
        else:
            delta, lo, hi = tol.delta_hum, bounds.hum_lower, bounds.hum_upper
        excess = 2.0 * delta + abs(rng.normal(0.0, delta))
        value = hi + excess if upward else lo - excess
        if on_temp:
            temp[i] = value
            log_entries.append((int(i), "spike_temp"))
        else:
            hum[i] = min(100.0, max(0.0, value))
            log_entries.append((int(i), "spike_hum"))
    for i in np.flatnonzero(gap_mask):
        temp[i] = np.nan
        hum[i] = np.nan
        log_entries.append((int(i), "gap"))

    log_entries.sort(key=lambda entry: entry[0])
    return series.with_channels(temperature=temp, humidity=hum), log_entries
