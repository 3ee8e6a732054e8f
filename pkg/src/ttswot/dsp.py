"""Waveform I/O and feature extraction at 16 kHz.

MFCC + deltas (encoder input), power STFT at arbitrary resolutions and an
autocorrelation F0 tracker used as the reference pitch.
"""

from __future__ import annotations

import csv
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.fft
import scipy.signal

from .errors import ConfigError, FormatError, LengthError

SAMPLE_RATE = 16000

MFCC_WINDOW = 400  # 25 ms
MFCC_HOP = 160  # 10 ms
MFCC_NFFT = 512
N_MELS = 26
N_CEPS = 13
PRE_EMPHASIS = 0.97
LOG_FLOOR = 1e-10

F0_MIN = 60.0
F0_MAX = 400.0
VOICING_THRESHOLD = 0.45


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.sample_rate != SAMPLE_RATE:
            raise FormatError(f"sample rate must be {SAMPLE_RATE}, got {self.sample_rate}")
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise FormatError("waveform must be mono (1-D)")
        if not np.all(np.isfinite(samples)):
            raise FormatError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class SpectralConfig:
    fft_bins: int
    frame_length: int
    stride: int

    def __post_init__(self):
        if self.frame_length > self.fft_bins:
            raise ConfigError(
                f"frame_length {self.frame_length} exceeds fft_bins {self.fft_bins}"
            )
        if self.stride < 1 or self.frame_length < 1:
            raise ConfigError("stride and frame_length must be positive")

    @property
    def n_freqs(self) -> int:
        return self.fft_bins // 2 + 1

    def n_frames(self, length: int) -> int:
        if length < self.frame_length:
            return 0
        return (length - self.frame_length) // self.stride + 1


@dataclass(frozen=True)
class FeatureSequence:
    frames: np.ndarray  # (n_frames, 39)
    frame_rate: int = 100

    def __len__(self):
        return self.frames.shape[0]


@dataclass(frozen=True)
class Spectrogram:
    power: np.ndarray  # (n_freqs, n_frames)
    config: SpectralConfig


@dataclass(frozen=True)
class F0Contour:
    f0_hz: np.ndarray
    frame_rate: int = 100

    def times(self) -> np.ndarray:
        """Frame-centre times in seconds."""
        hop = SAMPLE_RATE // self.frame_rate
        return (np.arange(len(self.f0_hz)) * hop + MFCC_WINDOW / 2) / SAMPLE_RATE


def _as_samples(wave_or_array) -> np.ndarray:
    if isinstance(wave_or_array, Waveform):
        return wave_or_array.samples
    return np.asarray(wave_or_array, dtype=np.float64)


def hann(n: int) -> np.ndarray:
    """Periodic Hann window (the DFT-even variant used for spectral analysis)."""
    return scipy.signal.get_window("hann", n, fftbins=True)


def frame_signal(x: np.ndarray, frame_length: int, stride: int) -> np.ndarray:
    """Strided (n_frames, frame_length) view; trailing partial frame dropped."""
    n = 0 if len(x) < frame_length else (len(x) - frame_length) // stride + 1
    if n == 0:
        return np.zeros((0, frame_length), dtype=x.dtype)
    return np.lib.stride_tricks.sliding_window_view(x, frame_length)[::stride][:n]


# ---------------------------------------------------------------------------
# WAV I/O
# ---------------------------------------------------------------------------


def read_wav(path) -> Waveform:
    """Read 16-bit PCM mono 16 kHz RIFF WAV; anything else is rejected."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as fh:
            if fh.getnchannels() != 1:
                raise FormatError(f"{path}: expected mono, got {fh.getnchannels()} channels")
            if fh.getsampwidth() != 2:
                raise FormatError(f"{path}: expected 16-bit PCM")
            if fh.getframerate() != SAMPLE_RATE:
                raise FormatError(
                    f"{path}: expected {SAMPLE_RATE} Hz, got {fh.getframerate()} Hz"
                )
            raw = fh.readframes(fh.getnframes())
    except wave.Error as exc:
        raise FormatError(f"{path}: {exc}") from exc
    pcm = np.frombuffer(raw, dtype="<i2")
    return Waveform(pcm.astype(np.float64) / 32768.0)


def write_wav(path, wave_or_array, peak_normalize: float | None = None) -> None:
    """Write 16-bit PCM mono 16 kHz.

    With ``peak_normalize`` the exported signal is scaled so that its peak
    sits at that fraction of full scale; the caller's array is not modified.
    """
    x = _as_samples(wave_or_array).copy()
    if peak_normalize is not None:
        peak = np.max(np.abs(x)) if len(x) else 0.0
        if peak > 0:
            x *= peak_normalize / peak
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(SAMPLE_RATE)
        fh.writeframes(pcm.tobytes())


# ---------------------------------------------------------------------------
# MFCC
# ---------------------------------------------------------------------------


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(n_mels=N_MELS, n_fft=MFCC_NFFT, sr=SAMPLE_RATE, fmin=0.0, fmax=None):
    """Triangular filters, equally spaced on the HTK mel scale. Shape (n_mels, n_fft//2+1)."""
    fmax = sr / 2 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sr / n_fft
    fb = np.zeros((n_mels, len(freqs)))
    for i in range(n_mels):
        lo, mid, hi = edges[i], edges[i + 1], edges[i + 2]
        rising = (freqs - lo) / (mid - lo)
        falling = (hi - freqs) / (hi - mid)
        fb[i] = np.maximum(0.0, np.minimum(rising, falling))
    return fb


_MEL_FB = mel_filterbank()


def deltas(feats: np.ndarray, width: int = 2) -> np.ndarray:
    """Regression deltas over +-width frames with edge replication."""
    n = len(feats)
    padded = np.concatenate([np.repeat(feats[:1], width, 0), feats, np.repeat(feats[-1:], width, 0)])
    denom = 2.0 * sum(k * k for k in range(1, width + 1))
    out = np.zeros_like(feats)
    for k in range(1, width + 1):
        out += k * (padded[width + k : width + k + n] - padded[width - k : width - k + n])
    return out / denom


def compute_mfcc(wave_or_array) -> FeatureSequence:
    """13 MFCCs + delta + delta-delta at 100 Hz, 25 ms Hann window."""
    x = _as_samples(wave_or_array)
    if len(x) < MFCC_WINDOW:
        raise LengthError(f"need at least {MFCC_WINDOW} samples, got {len(x)}")
    emph = np.empty_like(x)
    emph[0] = x[0]
    emph[1:] = x[1:] - PRE_EMPHASIS * x[:-1]
    frames = frame_signal(emph, MFCC_WINDOW, MFCC_HOP) * hann(MFCC_WINDOW)
    power = np.abs(np.fft.rfft(frames, n=MFCC_NFFT, axis=1)) ** 2
    logmel = np.log(np.maximum(power @ _MEL_FB.T, LOG_FLOOR))
    ceps = scipy.fft.dct(logmel, type=2, norm="ortho", axis=1)[:, :N_CEPS]
    d1 = deltas(ceps)
    d2 = deltas(d1)
    return FeatureSequence(np.hstack([ceps, d1, d2]))


# ---------------------------------------------------------------------------
# STFT
# ---------------------------------------------------------------------------


def stft(wave_or_array, cfg: SpectralConfig) -> Spectrogram:
    """Power spectrogram |DFT|^2 of Hann-windowed frames, shape (fft_bins//2+1, L)."""
    x = _as_samples(wave_or_array)
    if len(x) < cfg.frame_length:
        raise LengthError(f"need at least {cfg.frame_length} samples, got {len(x)}")
    frames = frame_signal(x, cfg.frame_length, cfg.stride) * hann(cfg.frame_length)
    spec = np.fft.rfft(frames, n=cfg.fft_bins, axis=1)
    power = spec.real**2 + spec.imag**2
    return Spectrogram(power.T, cfg)


# ---------------------------------------------------------------------------
# F0
# ---------------------------------------------------------------------------


def estimate_f0(wave_or_array) -> F0Contour:
    """Normalized cross-correlation pitch tracker, 25 ms window / 10 ms hop.

    Each frame is correlated against the signal delayed by lags covering
    60-400 Hz. The first local maximum within 90% of the best peak is taken
    (guards against octave-down errors) and refined by parabolic
    interpolation. Frames whose best peak is below 0.45 are unvoiced (0.0).
    """
    x = _as_samples(wave_or_array)
    n_frames = 0 if len(x) < MFCC_WINDOW else (len(x) - MFCC_WINDOW) // MFCC_HOP + 1
    f0 = np.zeros(n_frames)
    if n_frames == 0:
        return F0Contour(f0)

    lag_min = int(np.floor(SAMPLE_RATE / F0_MAX))
    lag_max = int(np.ceil(SAMPLE_RATE / F0_MIN))
    lags = np.arange(lag_min - 1, lag_max + 2)
    padded = np.concatenate([x, np.zeros(lags[-1] + MFCC_WINDOW)])
    starts = np.arange(n_frames) * MFCC_HOP
    idx = starts[:, None] + np.arange(MFCC_WINDOW)[None, :]
    ref = padded[idx]
    ref = ref - ref.mean(axis=1, keepdims=True)
    ref_energy = np.sum(ref**2, axis=1)

    corr = np.zeros((n_frames, len(lags)))
    for j, lag in enumerate(lags):
        seg = padded[idx + lag]
        seg = seg - seg.mean(axis=1, keepdims=True)
        denom = np.sqrt(ref_energy * np.sum(seg**2, axis=1))
        num = np.sum(ref * seg, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            corr[:, j] = np.where(denom > 1e-12, num / np.maximum(denom, 1e-300), 0.0)

    inner = slice(1, len(lags) - 1)
    for i in range(n_frames):
        r = corr[i]
        best = r[inner].max()
        if best < VOICING_THRESHOLD:
            continue
        peaks = [
            j
            for j in range(1, len(lags) - 1)
            if r[j] >= r[j - 1] and r[j] >= r[j + 1] and r[j] >= 0.9 * best
        ]
        j = peaks[0] if peaks else int(np.argmax(r[inner])) + 1
        a, b, c = r[j - 1], r[j], r[j + 1]
        curv = a - 2 * b + c
        shift = 0.5 * (a - c) / curv if curv < 0 else 0.0
        lag = lags[j] + np.clip(shift, -0.5, 0.5)
        f0[i] = np.clip(SAMPLE_RATE / lag, F0_MIN, F0_MAX)
    return F0Contour(f0)


def write_f0_csv(path, contour: F0Contour) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time_sec", "f0_hz"])
        for t, f in zip(contour.times(), contour.f0_hz):
            w.writerow([f"{t:.4f}", f"{f:.4f}"])
