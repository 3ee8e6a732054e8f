"""The full analysis/synthesis network: reservoir, bottleneck and vocoder."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .abcd_vae import AbcdVae, UnitSequence, encode_posterior, map_decode, quantize_output
from .config import TrainConfig
from .dsp import MFCC_HOP, MFCC_WINDOW, compute_mfcc, estimate_f0
from .errors import UnknownSpeakerError
from .nsf import Vocoder, VocoderConfig
from .reservoir import Reservoir, run_reservoir


def n_unit_frames(n_samples: int) -> int:
    """Number of 50 Hz frames produced for a signal of ``n_samples``."""
    if n_samples < MFCC_WINDOW:
        return 0
    return ((n_samples - MFCC_WINDOW) // MFCC_HOP + 1) // 2


class Model:
    """Parameter container plus the inference paths used by the CLI."""

    def __init__(self, cfg: TrainConfig, speakers, n_frames_total: int,
                 rng: np.random.Generator | None = None):
        self.cfg = cfg
        self.speakers = [str(s) for s in speakers]
        self.n_frames_total = int(n_frames_total)
        self.dtype = np.dtype(cfg.dtype)
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        self.reservoir = Reservoir(cfg.seed, n_units=cfg.esn_units, density=cfg.esn_density,
                                   spectral_radius=cfg.esn_radius, input_scale=cfg.esn_input_scale)
        self.vae = AbcdVae(rng, input_dim=cfg.esn_units, hidden=cfg.mlp_hidden, code_dim=cfg.code_dim,
                           n_codes=cfg.n_codes, alpha=cfg.alpha, dtype=self.dtype)
        self.vocoder = Vocoder(self.vocoder_config(cfg, len(self.speakers)), rng, dtype=self.dtype)

    @staticmethod
    def vocoder_config(cfg: TrainConfig, n_speakers: int) -> VocoderConfig:
        return VocoderConfig(
            unit_dim=cfg.code_dim, n_speakers=max(n_speakers, 1), speaker_dim=cfg.speaker_dim,
            lstm_hidden=cfg.lstm_hidden, lstm_layers=cfg.lstm_layers,
            upsample_channels=cfg.upsample_channels, cond_channels=cfg.cond_channels,
            filter_channels=cfg.filter_channels, harmonic_blocks=cfg.harmonic_blocks,
            noise_blocks=cfg.noise_blocks, layers_per_block=cfg.layers_per_block,
        )

    def parameters(self) -> dict[str, ad.Tensor]:
        params = {f"vae.{k}": v for k, v in self.vae.params.items()}
        params.update({f"vocoder.{k}": v for k, v in self.vocoder.params.items()})
        return params

    def speaker_index(self, speaker) -> int:
        key = str(speaker)
        if key in self.speakers:
            return self.speakers.index(key)
        try:
            idx = int(key)
        except ValueError:
            idx = -1
        if 0 <= idx < len(self.speakers):
            return idx
        raise UnknownSpeakerError(f"unknown speaker {speaker!r}")

    # -- analysis -------------------------------------------------------------

    def states(self, wave) -> np.ndarray:
        feats = compute_mfcc(wave)
        return run_reservoir(self.reservoir, feats).states

    def posterior(self, wave) -> np.ndarray:
        """(S, K) posterior rows for one waveform."""
        with ad.no_grad():
            return encode_posterior(self.vae, x=self.states(wave)).data

    def encode(self, wave) -> UnitSequence:
        return map_decode(self.posterior(wave))

    # -- synthesis --------------------------------------------------------------

    def unit_vectors(self, units: UnitSequence) -> np.ndarray:
        """Codebook columns of the per-frame categories (one-hot readout)."""
        frames = units.expand()
        if np.any((frames < 0) | (frames >= self.cfg.n_codes)):
            raise ValueError(f"unit index out of range [0, {self.cfg.n_codes})")
        onehot = np.eye(self.cfg.n_codes, dtype=self.dtype)[frames]
        with ad.no_grad():
            return quantize_output(onehot, self.vae.codebook).data

    def synthesize(self, units: UnitSequence, speaker, rng: np.random.Generator):
        """Waveform (320*S,) and conditioning (C, 320*S)."""
        spk = self.speaker_index(speaker)
        with ad.no_grad():
            wave, c = self.vocoder.synthesize(self.unit_vectors(units)[None], spk, rng)
        return wave.data[0], c.data[0]


def downsample_track(x: np.ndarray, n_frames: int) -> np.ndarray:
    """Mean of each 160-sample block: 16 kHz -> 100 Hz (block f covers [160f, 160f+160))."""
    out = np.zeros(n_frames)
    for f in range(n_frames):
        block = x[f * MFCC_HOP : (f + 1) * MFCC_HOP]
        out[f] = block.mean() if len(block) else 0.0
    return out


def f0_tracks(model: Model, wave, speaker, rng: np.random.Generator) -> dict:
    """Per-frame (100 Hz) F0 of the source input exp(c1), the resynthesis and the target.

    The input is encoded by MAP decoding and resynthesized with ``speaker``.
    All tracks are cut to the frames covered by both the input and the output.
    """
    x = np.asarray(getattr(wave, "samples", wave), dtype=np.float64)
    y, c = model.synthesize(model.encode(x), speaker, rng)
    target = estimate_f0(x)
    n = min(len(y) // MFCC_HOP, len(target.f0_hz))
    synth = estimate_f0(y).f0_hz if len(y) >= MFCC_WINDOW else np.zeros(0)
    synth = np.pad(synth, (0, max(0, n - len(synth))))[:n]
    return {
        "time_sec": target.times()[:n],
        "f0_source_exp_c1": downsample_track(np.exp(c[0]), n),
        "f0_synth": synth,
        "f0_target": target.f0_hz[:n],
    }
