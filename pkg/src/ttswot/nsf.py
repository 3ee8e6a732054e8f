"""Neural source-filter decoder.

Units (50 Hz) -> 3-layer BiLSTM with speaker conditioning -> four
transposed convolutions (x5, x4, x4, x4) -> 16 kHz conditioning c.
exp(c[0]) drives a harmonic source, a Gaussian drives a noise source; each
is shaped by stacks of dilated convolutions conditioned on c, then
low/high-pass FIR pairs and a sigmoid voicing flag mix voiced and voiceless
paths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .dsp import SAMPLE_RATE
from .errors import ShapeError, UnknownSpeakerError
from .remez import FIRFilter, design_pairs

N_HARMONICS = 8
DITHER_STD = 0.003
NOISE_STD = 0.003
VOICING_SLOPE = 5.0


@dataclass(frozen=True)
class VocoderConfig:
    unit_dim: int = 128
    n_speakers: int = 1
    speaker_dim: int = 128
    lstm_hidden: int = 128
    lstm_layers: int = 3
    upsample_channels: int = 128
    cond_channels: int = 64
    strides: tuple = (5, 4, 4, 4)
    kernels: tuple = (25, 16, 16, 16)
    filter_channels: int = 64
    harmonic_blocks: int = 5
    noise_blocks: int = 1
    layers_per_block: int = 10
    kernel_size: int = 3

    @property
    def hop(self) -> int:
        return int(np.prod(self.strides))


def receptive_field(layers: int, kernel_size: int = 3) -> int:
    """Receptive field of one block with dilations 1, 2, ..., 2**(layers-1)."""
    return 1 + (kernel_size - 1) * (2**layers - 1)


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Vocoder:
    def __init__(self, cfg: VocoderConfig, rng: np.random.Generator, dtype=np.float64,
                 fir: dict[str, FIRFilter] | None = None):
        self.cfg = cfg
        self.dtype = dtype
        self.params: dict[str, Tensor] = {}
        H = cfg.lstm_hidden

        def add(name, value):
            self.params[name] = Tensor(np.asarray(value, dtype=dtype), requires_grad=True, name=name)

        add("speaker.init", rng.standard_normal((cfg.n_speakers, cfg.speaker_dim)) * 0.1)
        add("speaker.concat", rng.standard_normal((cfg.n_speakers, cfg.speaker_dim)) * 0.1)
        add("lstm.init_proj.w", _uniform(rng, (cfg.speaker_dim, 4 * H), cfg.speaker_dim))
        add("lstm.init_proj.b", np.zeros(4 * H))
        in_dim = cfg.unit_dim + cfg.speaker_dim
        for layer in range(cfg.lstm_layers):
            for direction in ("fwd", "bwd"):
                pre = f"lstm.{layer}.{direction}"
                add(f"{pre}.w_ih", _uniform(rng, (4 * H, in_dim), H))
                add(f"{pre}.w_hh", _uniform(rng, (4 * H, H), H))
                add(f"{pre}.b", np.zeros(4 * H))
            in_dim = 2 * H

        chans = [2 * H] + [cfg.upsample_channels] * (len(cfg.strides) - 1) + [cfg.cond_channels]
        for i, k in enumerate(cfg.kernels):
            add(f"upsample.{i}.w", _uniform(rng, (chans[i], chans[i + 1], k), chans[i] * k))
            add(f"upsample.{i}.b", np.zeros(chans[i + 1]))

        for branch, n_blocks in (("harmonic", cfg.harmonic_blocks), ("noise", cfg.noise_blocks)):
            C = cfg.filter_channels
            for b in range(n_blocks):
                pre = f"{branch}.{b}"
                add(f"{pre}.in.w", _uniform(rng, (C, 1, 1), 1))
                add(f"{pre}.in.b", np.zeros(C))
                for l in range(cfg.layers_per_block):
                    add(f"{pre}.{l}.conv.w", _uniform(rng, (C, C, cfg.kernel_size), C * cfg.kernel_size))
                    add(f"{pre}.{l}.conv.b", np.zeros(C))
                    add(f"{pre}.{l}.cond.w", _uniform(rng, (C, cfg.cond_channels, 1), cfg.cond_channels))
                add(f"{pre}.out.w", np.zeros((1, C, 1)))
                add(f"{pre}.out.b", np.zeros(1))

        self.fir = fir if fir is not None else design_pairs()

    # -- condition submodule -------------------------------------------------

    def _speaker_rows(self, table: str, speaker_ids) -> Tensor:
        ids = np.atleast_1d(np.asarray(speaker_ids, dtype=np.intp))
        n = self.cfg.n_speakers
        bad = ids[(ids < 0) | (ids >= n)]
        if bad.size:
            raise UnknownSpeakerError(f"unknown speaker id {int(bad[0])} (have {n})")
        return ad.gather(self.params[table], ids, axis=0)

    def _lstm_direction(self, x: Tensor, pre: str, h: Tensor, c: Tensor, reverse: bool) -> Tensor:
        p = self.params
        gates_in = ad.matmul(x, ad.transpose(p[f"{pre}.w_ih"])) + p[f"{pre}.b"]
        w_hh_t = ad.transpose(p[f"{pre}.w_hh"])
        steps = range(x.shape[1] - 1, -1, -1) if reverse else range(x.shape[1])
        outs = [None] * x.shape[1]
        for t in steps:
            gates = gates_in[:, t, :] + ad.matmul(h, w_hh_t)
            h, c = ad.lstm_gates(gates, c)
            outs[t] = h
        return ad.stack(outs, axis=1)

    def condition(self, units, speaker_ids) -> Tensor:
        """(B, S, unit_dim) units -> (B, cond_channels, hop * S) conditioning."""
        cfg, p = self.cfg, self.params
        units = ad.as_tensor(units, p["speaker.init"])
        if units.ndim == 2:
            units = ad.reshape(units, (1,) + units.shape)
        batch, n_frames, _ = units.shape
        if n_frames < 1:
            raise ShapeError("condition needs at least one frame")
        ids = np.broadcast_to(np.atleast_1d(speaker_ids), (batch,))
        H = cfg.lstm_hidden

        concat_emb = self._speaker_rows("speaker.concat", ids)
        ones = np.ones((1, n_frames, 1), dtype=self.dtype)
        x = ad.concat([units, ad.reshape(concat_emb, (batch, 1, cfg.speaker_dim)) * ones], axis=-1)

        init = ad.matmul(self._speaker_rows("speaker.init", ids), p["lstm.init_proj.w"]) + p["lstm.init_proj.b"]
        zeros = Tensor(np.zeros((batch, H), dtype=self.dtype))
        for layer in range(cfg.lstm_layers):
            if layer == 0:
                hf, cf = init[:, 0:H], init[:, H : 2 * H]
                hb, cb = init[:, 2 * H : 3 * H], init[:, 3 * H :]
            else:
                hf = cf = hb = cb = zeros
            fwd = self._lstm_direction(x, f"lstm.{layer}.fwd", hf, cf, reverse=False)
            bwd = self._lstm_direction(x, f"lstm.{layer}.bwd", hb, cb, reverse=True)
            x = ad.concat([fwd, bwd], axis=-1)

        y = ad.swapaxes(x, 1, 2)
        last = len(cfg.strides) - 1
        for i, stride in enumerate(cfg.strides):
            y = ad.conv_transpose1d(y, p[f"upsample.{i}.w"], p[f"upsample.{i}.b"], stride=stride)
            if i != last:
                y = ad.tanh(y)
        return y

    # -- filter submodule ----------------------------------------------------

    def filter(self, x, c, branch: str) -> Tensor:
        n_blocks = self.cfg.harmonic_blocks if branch == "harmonic" else self.cfg.noise_blocks
        blocks = [self.block_params(branch, b) for b in range(n_blocks)]
        return filter_block(x, c, blocks)

    def block_params(self, branch: str, b: int) -> dict:
        p = self.params
        pre = f"{branch}.{b}"
        return {
            "in.w": p[f"{pre}.in.w"],
            "in.b": p[f"{pre}.in.b"],
            "layers": [
                (p[f"{pre}.{l}.conv.w"], p[f"{pre}.{l}.conv.b"], p[f"{pre}.{l}.cond.w"])
                for l in range(self.cfg.layers_per_block)
            ],
            "out.w": p[f"{pre}.out.w"],
            "out.b": p[f"{pre}.out.b"],
        }

    # -- full synthesis --------------------------------------------------------

    def synthesize(self, units, speaker_ids, rng: np.random.Generator):
        """Waveform (B, hop*S) and conditioning (B, C, hop*S)."""
        c = self.condition(units, speaker_ids)
        batch, _, length = c.shape
        c1 = c[:, 0, :]
        harmonic = harmonic_source(c1, rng)
        noise = Tensor(noise_source((batch, length), rng).astype(self.dtype))
        harm_f = self.filter(harmonic, c, "harmonic")
        noise_f = self.filter(noise, c, "noise")
        wave = mix_voicing(c1, harm_f, noise_f, self.fir)
        return wave, c

    def parameters(self) -> dict[str, Tensor]:
        return self.params


def harmonic_source(c1, rng: np.random.Generator, n_harmonics: int = N_HARMONICS,
                    dither_std: float = DITHER_STD) -> Tensor:
    """Sum of harmonics of f0 = exp(c1) with accumulated phase, plus dither.

    c1: (..., T) log-F0 track at 16 kHz.
    """
    c1 = ad.as_tensor(c1)
    f0 = ad.exp(c1)
    cycles = ad.cumsum(f0 * (1.0 / SAMPLE_RATE), axis=-1)
    # whole cycles do not change sin(2 pi h phase); removing them keeps precision
    cycles = cycles - np.floor(cycles.data)
    out = None
    for h in range(1, n_harmonics + 1):
        term = ad.sin(cycles * (2.0 * np.pi * h)) * (0.1 / h)
        out = term if out is None else out + term
    dither = rng.normal(0.0, dither_std, size=c1.shape).astype(c1.dtype)
    return out + dither


def noise_source(shape, rng: np.random.Generator, std: float = NOISE_STD) -> np.ndarray:
    """I.i.d. Gaussian excitation."""
    return rng.normal(0.0, std, size=shape)


def filter_block(x, c, blocks) -> Tensor:
    """Residual stacks of dilated convolutions conditioned on c.

    x: (B, T) or (T,), c: (B, C_cond, T). Each block is a dict with
    ``in.w`` (C,1,1), ``in.b``, ``layers`` [(conv.w (C,C,K), conv.b, cond.w (C,C_cond,1))],
    ``out.w`` (1,C,1), ``out.b``. Layer l uses dilation 2**l.
    """
    x = ad.as_tensor(x)
    c = ad.as_tensor(c, x)
    squeeze = x.ndim == 1
    if squeeze:
        x = ad.reshape(x, (1, x.shape[0]))
    if c.ndim == 2:
        c = ad.reshape(c, (1,) + c.shape)
    if c.shape[-1] != x.shape[-1]:
        raise ShapeError(f"filter_block: signal length {x.shape[-1]} != condition length {c.shape[-1]}")
    batch, length = x.shape
    sig = ad.reshape(x, (batch, 1, length))
    for blk in blocks:
        h = ad.conv1d(sig, blk["in.w"], blk["in.b"])
        for l, (w, b, wc) in enumerate(blk["layers"]):
            a = ad.conv1d(h, w, b, dilation=2**l) + ad.conv1d(c, wc)
            h = h + ad.tanh(a)
        sig = sig + ad.conv1d(h, blk["out.w"], blk["out.b"])
    out = ad.reshape(sig, (batch, length))
    return ad.reshape(out, (length,)) if squeeze else out


def fir_conv(x: Tensor, f: FIRFilter) -> Tensor:
    """Causal FIR filtering of (B, T) inside the graph."""
    x = ad.as_tensor(x)
    taps = np.asarray(f.taps[::-1], dtype=x.dtype).reshape(1, 1, -1)
    y = ad.conv1d(ad.reshape(x, (x.shape[0], 1, x.shape[1])), Tensor(taps))
    return ad.reshape(y, x.shape)


def voicing_flag(c1) -> Tensor:
    return ad.sigmoid(ad.as_tensor(c1) * VOICING_SLOPE)


def mix_voicing(c1, harmonic_filtered, noise_filtered, fir: dict[str, FIRFilter]) -> Tensor:
    """v * voiced + (1 - v) * voiceless, v = sigmoid(5 c1)."""
    v = voicing_flag(c1)
    voiced = fir_conv(noise_filtered, fir["voiced_highpass"]) + fir_conv(harmonic_filtered, fir["voiced_lowpass"])
    voiceless = (fir_conv(noise_filtered, fir["voiceless_highpass"])
                 + fir_conv(harmonic_filtered, fir["voiceless_lowpass"]))
    return v * voiced + (1.0 - v) * voiceless
