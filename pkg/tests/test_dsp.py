import numpy as np
import pytest

from breathhar.dsp import (
    EnvelopeConfig,
    WaveletBankConfig,
    envelope,
    filter_chain,
    gauss_deriv_wavelet,
    low_pass,
    scale_for_frequency,
    wavelet_bank_response,
    wavelet_transform,
)
from breathhar.errors import InsufficientDataError, ValidationError
from breathhar.synthgen import bump_train


class TestLowPass:
    def test_dc_signal_unchanged(self):
        x = np.full(200, 3.7)
        out = low_pass(x, 0.1, 1.0)
        assert np.all(np.abs(out - 3.7) <= 1e-9)

    def test_high_tone_attenuated_ten_fold(self):
        n = 600
        t = np.arange(n)
        x = np.sin(2 * np.pi * 0.05 * t) + np.sin(2 * np.pi * 0.45 * t)
        out = low_pass(x, 0.1, 1.0)
        spectrum_in = np.abs(np.fft.rfft(x)) / n
        spectrum_out = np.abs(np.fft.rfft(out)) / n
        k_high = int(round(0.45 * n))  # exact bin: 0.45 = 270/600
        assert spectrum_out[k_high] <= spectrum_in[k_high] / 10.0

    def test_attenuation_at_twice_cutoff_at_least_20db(self):
        fs, cutoff = 100.0, 5.0
        t = np.arange(0, 60, 1 / fs)
        x = np.sin(2 * np.pi * 2 * cutoff * t)
        out = low_pass(x, cutoff, fs)
        interior = slice(len(t) // 4, 3 * len(t) // 4)
        ratio = np.abs(out[interior]).max() / 1.0
        assert 20 * np.log10(1.0 / ratio) >= 20.0

    def test_zero_phase_impulse_response_symmetric(self):
        x = np.zeros(301)
        x[150] = 1.0
        out = low_pass(x, 0.1, 1.0)
        assert np.allclose(out, out[::-1], atol=1e-9)

    def test_cutoff_at_or_above_nyquist_rejected(self):
        with pytest.raises(ValidationError):
            low_pass(np.zeros(100), 0.5, 1.0)
        with pytest.raises(ValidationError):
            low_pass(np.zeros(100), 0.0, 1.0)


class TestGaussDerivWavelet:
    def test_zero_at_origin(self):
        assert gauss_deriv_wavelet(0.0, 1.3) == 0.0

    def test_antisymmetric_on_grid(self):
        t = np.linspace(-5, 5, 201)
        psi = gauss_deriv_wavelet(t, 0.8)
        assert np.allclose(psi, -psi[::-1], atol=1e-12)

    def test_extremum_at_plus_minus_sigma(self):
        # d(psi)/dt = 0 at t = +-sigma with |psi| = exp(-1/2)/sigma
        sigma = 0.7
        t = np.linspace(-4 * sigma, 4 * sigma, 100001)
        psi = gauss_deriv_wavelet(t, sigma)
        peak_idx = int(np.argmax(np.abs(psi)))
        assert abs(abs(t[peak_idx]) - sigma) <= 1e-3
        assert np.abs(psi).max() == pytest.approx(np.exp(-0.5) / sigma, rel=1e-6)

    def test_rejects_nonpositive_sigma(self):
        with pytest.raises(ValidationError):
            gauss_deriv_wavelet(0.0, 0.0)


class TestWaveletTransform:
    def test_constant_signal_yields_zero(self):
        out = wavelet_transform(np.full(100, 7.3), sigma_s=1.0, sampling_hz=1.0)
        assert np.all(np.abs(out) <= 1e-9)

    def test_matched_filter_peaks_at_center(self):
        sigma, fs = 1.5, 10.0
        t = (np.arange(401) - 200) / fs
        signal = gauss_deriv_wavelet(t, sigma)
        coeff = wavelet_transform(signal, sigma, fs)
        assert int(np.argmax(coeff)) == 200

    def test_scale_sweep_peaks_at_matching_center_frequency(self):
        fs, rate = 10.0, 0.25
        t = np.arange(0, 600, 1 / fs)
        signal = bump_train(t, 1 / rate, 0.2 / rate)
        signal = signal - signal.mean()
        centers = np.linspace(0.1, 0.45, 10)
        response = [
            np.abs(wavelet_transform(signal, scale_for_frequency(fc), fs)).max()
            for fc in centers
        ]
        best = centers[int(np.argmax(response))]
        nearest = centers[int(np.argmin(np.abs(centers - rate)))]
        assert best == nearest

    def test_output_length_matches_input(self):
        out = wavelet_transform(np.random.default_rng(0).normal(size=250), 1.0, 1.0)
        assert len(out) == 250

    def test_signal_shorter_than_support_rejected(self):
        with pytest.raises(InsufficientDataError):
            wavelet_transform(np.zeros(5), sigma_s=2.0, sampling_hz=1.0)


class TestWaveletBank:
    def test_single_scale_equals_single_transform(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=300)
        cfg = WaveletBankConfig(n_scales=1, f_low_hz=0.2, f_high_hz=0.2, sampling_hz=1.0)
        bank = wavelet_bank_response(x, cfg)
        single = wavelet_transform(x, scale_for_frequency(0.2), 1.0)
        assert np.allclose(bank, single, atol=1e-12)

    def test_constant_signal_zero_response(self):
        cfg = WaveletBankConfig(sampling_hz=1.0)
        out = wavelet_bank_response(np.full(300, 2.0), cfg)
        assert np.all(np.abs(out) <= 1e-9)

    def test_linearity(self):
        rng = np.random.default_rng(2)
        x, y = rng.normal(size=300), rng.normal(size=300)
        cfg = WaveletBankConfig(sampling_hz=1.0)
        lhs = wavelet_bank_response(x + y, cfg)
        rhs = wavelet_bank_response(x, cfg) + wavelet_bank_response(y, cfg)
        assert np.all(np.abs(lhs - rhs) <= 1e-9)

    def test_band_must_stay_below_nyquist(self):
        with pytest.raises(ValidationError):
            WaveletBankConfig(f_low_hz=0.1, f_high_hz=0.6, sampling_hz=1.0)


class TestEnvelope:
    def test_pure_tone_amplitude_within_2_percent(self):
        fs, f, amp = 10.0, 0.2, 1.7
        t = np.arange(0, 300, 1 / fs)
        x = amp * np.sin(2 * np.pi * f * t)
        env = envelope(x, EnvelopeConfig(), fs)
        interior = slice(len(t) // 10, -len(t) // 10)
        assert np.abs(env[interior] - amp).max() <= 0.02 * amp

    def test_zero_signal_zero_envelope(self):
        env = envelope(np.zeros(64), EnvelopeConfig(), 10.0)
        assert np.all(env == 0.0)

    def test_am_tone_tracks_modulator(self):
        fs = 10.0
        t = np.arange(0, 600, 1 / fs)
        modulator = 1.0 + 0.5 * np.sin(2 * np.pi * 0.02 * t)
        x = modulator * np.sin(2 * np.pi * 0.3 * t)
        env = envelope(x, EnvelopeConfig(), fs)
        interior = slice(len(t) // 10, -len(t) // 10)
        rel_err = np.abs(env[interior] - modulator[interior]) / modulator[interior]
        assert rel_err.max() <= 0.05

    def test_positive_homogeneity(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=256)
        cfg = EnvelopeConfig()
        a = envelope(3.5 * x, cfg, 10.0)
        b = 3.5 * envelope(x, cfg, 10.0)
        assert np.allclose(a, b, atol=1e-9)

    def test_output_nonnegative(self):
        rng = np.random.default_rng(4)
        env = envelope(rng.normal(size=512), EnvelopeConfig(), 10.0)
        assert np.all(env >= 0.0)

    def test_too_short_rejected(self):
        with pytest.raises(InsufficientDataError):
            envelope(np.zeros(4), EnvelopeConfig(), 10.0)


class TestFilterChain:
    def test_all_outputs_finite(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=400)
        bank = WaveletBankConfig(sampling_hz=1.0)
        filtered, response, env = filter_chain(x, 1.0, 0.45, bank,
                                               EnvelopeConfig(max_breath_rate_hz=0.3))
        for out in (filtered, response, env):
            assert np.all(np.isfinite(out))
            assert len(out) == len(x)
