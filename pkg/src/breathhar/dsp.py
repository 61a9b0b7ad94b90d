"""The breath filter chain: low-pass prefilter, Gaussian-derivative wavelet
bank over linearly spaced scales, and Hilbert-transform envelope with a
rate-adaptive final low-pass.

Scale-to-frequency mapping: a first-derivative-of-Gaussian wavelet with time
width sigma has its maximum spectral response at f_c = 1 / (2 pi sigma), so
each bank scale is parameterized by its center frequency. Kernels are plain
sampled wavelets (amplitude normalization): the response to a unit tone at a
scale's own center frequency is then the same constant, sqrt(2 pi) e^{-1/2},
for every scale, and a scale sweep peaks exactly at the scale whose center
frequency matches the input rate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import butter, sosfiltfilt

from .errors import InsufficientDataError, ValidationError

# Samples beyond +-5 sigma contribute less than exp(-12.5) and are truncated.
WAVELET_SUPPORT_SIGMAS = 5.0

LOW_PASS_ORDER = 4


@dataclass(frozen=True)
class WaveletBankConfig:
    """Band of center frequencies covered by the wavelet bank."""

    n_scales: int = 10
    f_low_hz: float = 0.1
    f_high_hz: float = 0.45
    sampling_hz: float = 1.0

    def __post_init__(self):
        if self.n_scales < 1:
            raise ValidationError(f"n_scales must be >= 1, got {self.n_scales}")
        if not (0.0 < self.f_low_hz <= self.f_high_hz):
            raise ValidationError(
                f"need 0 < f_low <= f_high, got ({self.f_low_hz}, {self.f_high_hz})"
            )
        if self.f_high_hz >= self.sampling_hz / 2.0:
            raise ValidationError(
                f"f_high {self.f_high_hz} Hz must stay below the Nyquist limit "
                f"{self.sampling_hz / 2.0} Hz"
            )
        if self.n_scales > 1 and self.f_low_hz == self.f_high_hz:
            raise ValidationError("degenerate band: f_low == f_high with n_scales > 1")

    @property
    def center_frequencies(self) -> np.ndarray:
        return np.linspace(self.f_low_hz, self.f_high_hz, self.n_scales)


@dataclass(frozen=True)
class EnvelopeConfig:
    """Final low-pass of the envelope detector: multiplier x max breath rate."""

    max_breath_rate_hz: float = 0.5  # 30 breaths/min
    cutoff_multiplier: float = 1.5

    def __post_init__(self):
        if self.max_breath_rate_hz <= 0 or self.cutoff_multiplier <= 0:
            raise ValidationError("envelope rate and multiplier must be positive")

    @property
    def cutoff_hz(self) -> float:
        return self.cutoff_multiplier * self.max_breath_rate_hz


def low_pass(signal, cutoff_hz: float, sampling_hz: float, order: int = LOW_PASS_ORDER) -> np.ndarray:
    """Zero-phase Butterworth low-pass (forward-backward, no peak shift)."""
    if not (0.0 < cutoff_hz < sampling_hz / 2.0):
        raise ValidationError(
            f"cutoff {cutoff_hz} Hz must lie in (0, Nyquist={sampling_hz / 2.0} Hz)"
        )
    x = np.asarray(signal, dtype=float)
    if x.size < 4:
        raise InsufficientDataError(f"signal too short to filter (length {x.size})")
    sos = butter(order, cutoff_hz, btype="low", fs=sampling_hz, output="sos")
    padlen = min(3 * 2 * sos.shape[0], x.size - 1)
    return sosfiltfilt(sos, x, padlen=padlen)


def gauss_deriv_wavelet(t, sigma: float):
    """First-order Gaussian derivative: -(t / sigma^2) exp(-t^2 / (2 sigma^2))."""
    if sigma <= 0:
        raise ValidationError(f"sigma must be positive, got {sigma}")
    t = np.asarray(t, dtype=float)
    out = -(t / (sigma * sigma)) * np.exp(-(t * t) / (2.0 * sigma * sigma))
    return float(out) if out.ndim == 0 else out


def scale_for_frequency(center_hz: float) -> float:
    """Wavelet time width whose spectral response peaks at center_hz."""
    if center_hz <= 0:
        raise ValidationError(f"center frequency must be positive, got {center_hz}")
    return 1.0 / (2.0 * np.pi * center_hz)


def support_radius_samples(sigma_s: float, sampling_hz: float) -> int:
    """Half-width of the truncated wavelet kernel in samples."""
    return int(np.ceil(WAVELET_SUPPORT_SIGMAS * sigma_s * sampling_hz))


def wavelet_transform(signal, sigma_s: float, sampling_hz: float) -> np.ndarray:
    """Same-size correlation with the sampled wavelet, zero-padded edges.

    Translations run over the sample grid, so the output aligns 1:1 with the
    input; the first/last support_radius_samples are edge-affected and should
    be treated as low confidence downstream.
    """
    if sigma_s <= 0:
        raise ValidationError(f"sigma must be positive, got {sigma_s}")
    x = np.asarray(signal, dtype=float)
    half = support_radius_samples(sigma_s, sampling_hz)
    if 2 * half + 1 > x.size:
        raise InsufficientDataError(
            f"signal length {x.size} is shorter than the wavelet support {2 * half + 1}"
        )
    dt = 1.0 / sampling_hz
    taps = np.arange(-half, half + 1, dtype=float) * dt
    kernel = gauss_deriv_wavelet(taps, sigma_s) * dt
    # Correlate the mean-removed signal (equivalent to padding edges with the
    # mean) so the DC level does not leak into the zero-padded borders; the
    # wavelet has zero mean, so interior values are unaffected.
    return np.correlate(x - x.mean(), kernel, mode="same")


def wavelet_bank_response(signal, cfg: WaveletBankConfig) -> np.ndarray:
    """Sum of wavelet responses over the bank's center frequencies.

    Scales are summed in ascending frequency order for bit reproducibility.
    """
    x = np.asarray(signal, dtype=float)
    out = np.zeros_like(x)
    for fc in cfg.center_frequencies:
        out += wavelet_transform(x, scale_for_frequency(fc), cfg.sampling_hz)
    return out


def bank_support_radius(cfg: WaveletBankConfig) -> int:
    """Largest edge-affected margin across the bank (lowest frequency scale)."""
    return support_radius_samples(scale_for_frequency(cfg.f_low_hz), cfg.sampling_hz)


def analytic_signal(signal) -> np.ndarray:
    """Analytic signal via the frequency-domain Hilbert construction."""
    x = np.asarray(signal, dtype=float)
    n = x.size
    spectrum = np.fft.fft(x)
    gain = np.zeros(n)
    if n % 2 == 0:
        gain[0] = gain[n // 2] = 1.0
        gain[1:n // 2] = 2.0
    else:
        gain[0] = 1.0
        gain[1:(n + 1) // 2] = 2.0
    return np.fft.ifft(spectrum * gain)


def envelope(signal, cfg: EnvelopeConfig, sampling_hz: float) -> np.ndarray:
    """Instantaneous amplitude sqrt(x^2 + H(x)^2), then the final low-pass.

    The low-pass can ring slightly negative on sharp transients, so the
    output is clamped at zero.
    """
    x = np.asarray(signal, dtype=float)
    if x.size < 8:
        raise InsufficientDataError(f"envelope needs >= 8 samples, got {x.size}")
    magnitude = np.abs(analytic_signal(x))
    smoothed = low_pass(magnitude, cfg.cutoff_hz, sampling_hz)
    return np.maximum(smoothed, 0.0)


def filter_chain(signal, sampling_hz: float, prefilter_cutoff_hz: float,
                 bank: WaveletBankConfig, env: EnvelopeConfig):
    """Full chain: prefilter, wavelet bank, envelope.

    Returns (filtered, bank_response, envelope) so intermediate stages can be
    persisted and plotted.
    """
    filtered = low_pass(signal, prefilter_cutoff_hz, sampling_hz)
    response = wavelet_bank_response(filtered, bank)
    env_signal = envelope(response, env, sampling_hz)
    return filtered, response, env_signal
