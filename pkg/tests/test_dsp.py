import wave

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ttswot.dsp import (
    SAMPLE_RATE,
    SpectralConfig,
    Waveform,
    compute_mfcc,
    deltas,
    estimate_f0,
    read_wav,
    stft,
    write_f0_csv,
    write_wav,
)
from ttswot.errors import ConfigError, FormatError, LengthError


def tone(freq, seconds, sr=SAMPLE_RATE, amp=0.5):
    t = np.arange(int(seconds * sr)) / sr
    return amp * np.sin(2 * np.pi * freq * t)


# ----------------------------------------------------------------------------
# MFCC
# ----------------------------------------------------------------------------


class TestMfcc:
    def test_one_second_gives_98_frames(self):
        feats = compute_mfcc(np.random.default_rng(0).standard_normal(16000))
        assert feats.frames.shape == (98, 39)
        assert feats.frame_rate == 100

    def test_silence_has_constant_frames_and_zero_deltas(self):
        frames = compute_mfcc(np.zeros(8000)).frames
        np.testing.assert_array_equal(frames, np.broadcast_to(frames[0], frames.shape))
        assert np.all(frames[:, 13:] == 0.0)

    def test_hop_periodic_tone_has_zero_interior_deltas(self):
        # 500 Hz completes exactly five cycles per hop, so every frame sees the same samples
        frames = compute_mfcc(tone(500, 0.5)).frames
        assert frames.shape[0] == 48
        interior = frames[5:-5]
        assert np.max(np.abs(interior[:, 13:26])) < 1e-6 * max(1.0, np.max(np.abs(interior[:, :13])))

    def test_short_input_rejected(self):
        with pytest.raises(LengthError):
            compute_mfcc(np.zeros(399))

    def test_shift_by_one_hop_shifts_one_frame(self):
        x = np.random.default_rng(1).standard_normal(8000)
        a = compute_mfcc(x[160:]).frames
        b = compute_mfcc(x).frames[1:]
        # pre-emphasis and delta edges differ at the boundaries only
        np.testing.assert_allclose(a[3:-3, :13], b[3 : len(a) - 3, :13], atol=1e-9)

    def test_deltas_of_linear_ramp_are_constant(self):
        ramp = np.arange(20, dtype=float)[:, None] * np.ones((1, 3))
        d = deltas(ramp)
        np.testing.assert_allclose(d[2:-2], 1.0)


# ----------------------------------------------------------------------------
# STFT
# ----------------------------------------------------------------------------


class TestStft:
    @pytest.mark.parametrize("cfg,shape", [
        ((128, 80, 40), (65, 399)),
        ((512, 400, 100), (257, 157)),
        ((2048, 1920, 640), (1025, 23)),
    ])
    def test_one_second_shapes(self, cfg, shape):
        spec = stft(np.ones(16000), SpectralConfig(*cfg))
        assert spec.power.shape == shape

    def test_zero_signal_zero_power(self):
        spec = stft(np.zeros(4000), SpectralConfig(512, 400, 100))
        assert np.all(spec.power == 0.0)

    def test_frame_longer_than_fft_rejected(self):
        with pytest.raises(ConfigError):
            SpectralConfig(128, 200, 40)

    def test_short_signal_rejected(self):
        with pytest.raises(LengthError):
            stft(np.zeros(100), SpectralConfig(512, 400, 100))

    @settings(max_examples=40, deadline=None)
    @given(length=st.integers(min_value=80, max_value=5000))
    def test_frame_count_formula(self, length):
        cfg = SpectralConfig(128, 80, 40)
        spec = stft(np.ones(length), cfg)
        assert spec.power.shape[1] == (length - 80) // 40 + 1 == cfg.n_frames(length)

    def test_power_scales_quadratically(self):
        x = np.random.default_rng(2).standard_normal(3000)
        cfg = SpectralConfig(512, 400, 100)
        np.testing.assert_allclose(stft(3.0 * x, cfg).power, 9.0 * stft(x, cfg).power, rtol=1e-12)

    def test_tone_peak_bin(self):
        spec = stft(tone(1000, 0.5), SpectralConfig(512, 400, 100))
        peak = np.argmax(spec.power.mean(axis=1))
        assert peak == round(1000 * 512 / SAMPLE_RATE)


# ----------------------------------------------------------------------------
# F0
# ----------------------------------------------------------------------------


class TestEstimateF0:
    def test_sine_220(self):
        f0 = estimate_f0(tone(220, 1.0)).f0_hz
        voiced = f0[f0 > 0]
        assert len(voiced) > 0.9 * len(f0)
        np.testing.assert_allclose(voiced, 220.0, atol=3.0)

    def test_white_noise_mostly_unvoiced(self):
        f0 = estimate_f0(np.random.default_rng(3).standard_normal(16000)).f0_hz
        assert np.mean(f0 == 0.0) >= 0.95

    def test_zero_signal_unvoiced(self):
        assert np.all(estimate_f0(np.zeros(8000)).f0_hz == 0.0)

    @pytest.mark.parametrize("freq", [70.0, 110.0, 180.0, 300.0, 390.0])
    def test_codomain_and_accuracy(self, freq):
        f0 = estimate_f0(tone(freq, 0.5)).f0_hz
        voiced = f0[f0 > 0]
        assert np.all((voiced >= 60) & (voiced <= 400))
        assert abs(np.median(voiced) - freq) < 3.0

    def test_frame_times(self):
        contour = estimate_f0(np.zeros(1000))
        np.testing.assert_allclose(contour.times(), [0.0125, 0.0225, 0.0325, 0.0425])

    def test_csv_output(self, tmp_path):
        contour = estimate_f0(tone(200, 0.1))
        write_f0_csv(tmp_path / "f0.csv", contour)
        lines = (tmp_path / "f0.csv").read_text().splitlines()
        assert lines[0] == "time_sec,f0_hz"
        assert len(lines) == len(contour.f0_hz) + 1


# ----------------------------------------------------------------------------
# WAV I/O
# ----------------------------------------------------------------------------


class TestWav:
    def test_round_trip_quantization(self, tmp_path):
        x = tone(300, 0.1, amp=0.3)
        write_wav(tmp_path / "a.wav", x)
        y = read_wav(tmp_path / "a.wav").samples
        np.testing.assert_allclose(y, x, atol=1.0 / 32768)

    def test_peak_normalization_on_export_only(self, tmp_path):
        x = tone(300, 0.1, amp=0.1)
        before = x.copy()
        write_wav(tmp_path / "a.wav", x, peak_normalize=0.95)
        np.testing.assert_array_equal(x, before)
        assert abs(np.max(np.abs(read_wav(tmp_path / "a.wav").samples)) - 0.95) < 1e-3

    def test_rejects_wrong_rate(self, tmp_path):
        path = tmp_path / "b.wav"
        with wave.open(str(path), "wb") as fh:
            fh.setnchannels(1)
            fh.setsampwidth(2)
            fh.setframerate(8000)
            fh.writeframes(np.zeros(100, dtype="<i2").tobytes())
        with pytest.raises(FormatError):
            read_wav(path)

    def test_rejects_stereo(self, tmp_path):
        path = tmp_path / "c.wav"
        with wave.open(str(path), "wb") as fh:
            fh.setnchannels(2)
            fh.setsampwidth(2)
            fh.setframerate(16000)
            fh.writeframes(np.zeros(200, dtype="<i2").tobytes())
        with pytest.raises(FormatError):
            read_wav(path)

    def test_waveform_validation(self):
        with pytest.raises(FormatError):
            Waveform(np.array([0.0, np.nan]))
        with pytest.raises(FormatError):
            Waveform(np.zeros(10), sample_rate=8000)
