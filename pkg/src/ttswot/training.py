"""Objective, optimizer, schedules and the training loop."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .abcd_vae import apply_jitter, gumbel_softmax_sample, kl_loss, quantize_output, update_concentration
from .autodiff import Tensor
from .config import TrainConfig
from .dsp import (MFCC_HOP, MFCC_WINDOW, SAMPLE_RATE, F0Contour, SpectralConfig, compute_mfcc,
                  estimate_f0, hann, read_wav)
from .errors import ConfigError, NumericError, ShapeError, TrainingAborted
from .model import Model, n_unit_frames
from .reservoir import run_reservoir

F0_SCALE = 100.0
F0_CLAMP = 500.0


# ---------------------------------------------------------------------------
# Spectral loss
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpectralLossConfig:
    configs: tuple = (
        SpectralConfig(128, 80, 40),
        SpectralConfig(512, 400, 100),
        SpectralConfig(2048, 1920, 640),
    )
    epsilon: float = 1e-5

    @property
    def min_length(self) -> int:
        return max(c.frame_length for c in self.configs)


DEFAULT_SPECTRAL = SpectralLossConfig()


def spectral_loss_graph(y, y_hat, cfg: SpectralLossConfig = DEFAULT_SPECTRAL) -> Tensor:
    """Multi-resolution log-spectral distance, one value per row of (B, T) input.

    For each resolution: (1 / 2LM) sum_{m,l} log((|y|^2 + eps) / (|y_hat|^2 + eps))^2
    with M frequency bins and L frames; the resolutions are averaged.
    """
    y_hat = ad.as_tensor(y_hat)
    y = ad.as_tensor(y, y_hat)
    if y.shape != y_hat.shape:
        raise ShapeError(f"spectral_loss: length mismatch {y.shape} vs {y_hat.shape}")
    total = None
    for sc in cfg.configs:
        win = hann(sc.frame_length)
        p = ad.rfft_power(y, sc.frame_length, sc.stride, sc.fft_bins, win)
        p_hat = ad.rfft_power(y_hat, sc.frame_length, sc.stride, sc.fft_bins, win)
        log_ratio = ad.log(p + cfg.epsilon) - ad.log(p_hat + cfg.epsilon)
        per = ad.mean(log_ratio * log_ratio, axis=(-2, -1)) * 0.5
        total = per if total is None else total + per
    return total * (1.0 / len(cfg.configs))


def spectral_loss(y, y_hat, cfg: SpectralLossConfig = DEFAULT_SPECTRAL) -> float:
    """Scalar spectral loss between two 1-D waveforms."""
    y = np.asarray(getattr(y, "samples", y), dtype=np.float64)
    y_hat = np.asarray(getattr(y_hat, "samples", y_hat), dtype=np.float64)
    if y.shape != y_hat.shape:
        raise ShapeError(f"spectral_loss: length mismatch {y.shape} vs {y_hat.shape}")
    with ad.no_grad():
        return float(spectral_loss_graph(y, y_hat, cfg).data)


# ---------------------------------------------------------------------------
# F0 loss
# ---------------------------------------------------------------------------


def upsample_f0(f0, n_samples: int) -> np.ndarray:
    """Step-hold 100 Hz F0 values to 16 kHz: sample t takes frame t // 160."""
    values = f0.f0_hz if isinstance(f0, F0Contour) else np.asarray(f0, dtype=np.float64)
    if len(values) == 0:
        return np.zeros(n_samples)
    idx = np.minimum(np.arange(n_samples) // MFCC_HOP, len(values) - 1)
    return values[idx]


def f0_loss_graph(c1, f0_ref) -> Tensor:
    """mean(((clip(exp(c1), 0, 500) - f0_ref) / 100)^2) over the last axis."""
    c1 = ad.as_tensor(c1)
    if isinstance(f0_ref, F0Contour):
        f0_ref = upsample_f0(f0_ref, c1.shape[-1])
    ref = np.asarray(f0_ref, dtype=c1.dtype)
    if ref.shape != c1.shape:
        raise ShapeError(f"f0_loss: reference shape {ref.shape} != {c1.shape}")
    diff = (ad.clip(ad.exp(c1), 0.0, F0_CLAMP) - ref) * (1.0 / F0_SCALE)
    return ad.mean(diff * diff, axis=-1)


def f0_loss(c1, f0_ref) -> float:
    with ad.no_grad():
        return float(np.mean(f0_loss_graph(np.asarray(c1, dtype=np.float64), f0_ref).data))


# ---------------------------------------------------------------------------
# Schedules
# ---------------------------------------------------------------------------


def lr_at(iteration: int, cfg: TrainConfig = TrainConfig()) -> float:
    halvings = sum(1 for m in cfg.lr_halve_at if iteration >= m)
    return cfg.lr * 0.5**halvings


def tau_at(iteration: int, cfg: TrainConfig = TrainConfig()) -> float:
    """Gumbel-softmax temperature, refreshed every ``tau_interval`` iterations."""
    held = (iteration // cfg.tau_interval) * cfg.tau_interval
    return max(cfg.tau_min, math.exp(-cfg.tau_decay * held))


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> None:
    """Bias-corrected Adam update, in place on ``params[name].data``."""
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**state.step
    corr2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if p.data.shape != np.shape(g):
            raise ShapeError(f"gradient shape {np.shape(g)} != parameter shape {p.data.shape} for {name}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        step = (lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)).astype(p.data.dtype)
        p.data -= step


def clip_gradients(grads: dict, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``; return the norm."""
    norm = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for name in grads:
            grads[name] = grads[name] * np.asarray(scale, dtype=grads[name].dtype)
    return norm


# ---------------------------------------------------------------------------
# Corpus and batches
# ---------------------------------------------------------------------------


@dataclass
class Corpus:
    paths: list
    speakers: list  # speaker names, index = speaker id
    speaker_ids: list  # per file
    _cache: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.paths)

    def wave(self, i: int) -> np.ndarray:
        if i not in self._cache:
            self._cache[i] = read_wav(self.paths[i]).samples
        return self._cache[i]

    def subset(self, indices) -> "Corpus":
        indices = list(indices)
        return Corpus([self.paths[i] for i in indices], list(self.speakers),
                      [self.speaker_ids[i] for i in indices])

    def total_unit_frames(self) -> int:
        return sum(n_unit_frames(len(self.wave(i))) for i in range(len(self)))

    def total_seconds(self) -> float:
        return sum(len(self.wave(i)) for i in range(len(self))) / SAMPLE_RATE


def load_corpus(directory) -> Corpus:
    """All ``*.wav`` files of a directory; speakers from ``utt2spk.csv`` if present.

    ``utt2spk.csv`` has columns ``utt_id,speaker_id`` where utt_id is the file
    stem. Without it every file belongs to a single speaker ``0``.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise ConfigError(f"corpus directory not found: {directory}")
    paths = sorted(directory.glob("*.wav"))
    if not paths:
        raise ConfigError(f"corpus {directory} contains no .wav files")
    mapping = {}
    table = directory / "utt2spk.csv"
    if table.exists():
        with open(table, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                mapping[row["utt_id"]] = row["speaker_id"]
    names = [mapping.get(p.stem, "0") for p in paths]
    speakers = sorted(set(names))
    return Corpus(paths, speakers, [speakers.index(n) for n in names])


@dataclass
class Segment:
    wave: np.ndarray
    speaker: int


def min_crop_samples(loss_cfg: SpectralLossConfig = DEFAULT_SPECTRAL) -> int:
    """Shortest crop giving a vocoder output that every loss resolution can frame.

    A crop also needs at least one MFCC window; 50 Hz frame count S must
    satisfy 320 S >= the longest loss frame.
    """
    hop = 320
    s_min = max(1, -(-loss_cfg.min_length // hop))
    return max(MFCC_WINDOW, MFCC_WINDOW + (2 * s_min - 1) * MFCC_HOP)


def draw_batch(corpus: Corpus, cfg: TrainConfig, iteration: int) -> list[Segment]:
    """Crops for one iteration, drawn from an RNG keyed on (seed, iteration)."""
    rng = np.random.default_rng([cfg.seed, iteration, 1])
    max_len = int(round(cfg.max_crop_sec * SAMPLE_RATE))
    min_len = min_crop_samples()
    usable = [i for i in range(len(corpus)) if len(corpus.wave(i)) >= min_len]
    if not usable:
        raise ConfigError(f"no corpus file is at least {min_len} samples long")
    batch = []
    while len(batch) < cfg.batch_size:
        i = usable[int(rng.integers(len(usable)))]
        x = corpus.wave(i)
        if len(x) > max_len:
            start = int(rng.integers(len(x) - max_len + 1))
            x = x[start : start + max_len]
        batch.append(Segment(x, corpus.speaker_ids[i]))
    return batch


# ---------------------------------------------------------------------------
# Objective
# ---------------------------------------------------------------------------


@dataclass
class LossReport:
    iteration: int
    lr: float
    tau: float
    l_spec: float
    l_kl: float
    l_f0: float | None
    total: float

    def row(self) -> list:
        f0 = "" if self.l_f0 is None else repr(self.l_f0)
        return [self.iteration, repr(self.lr), repr(self.tau), repr(self.l_spec), repr(self.l_kl), f0,
                repr(self.total)]

    def is_finite(self) -> bool:
        vals = [self.l_spec, self.l_kl, self.total] + ([] if self.l_f0 is None else [self.l_f0])
        return all(np.isfinite(v) for v in vals)


LOG_HEADER = ["iter", "lr", "tau", "l_spec", "l_kl", "l_f0", "total"]


def group_by_length(segments: list[Segment]) -> list[list[Segment]]:
    groups: dict[int, list[Segment]] = {}
    for seg in segments:
        groups.setdefault(len(seg.wave), []).append(seg)
    return [groups[k] for k in sorted(groups)]


def batch_objective(model: Model, segments: list[Segment], rng: np.random.Generator, *,
                    pretrain: bool, tau: float, kl_weight: float = 1.0, use_f0: bool = False,
                    jitter: float = 0.12, loss_cfg: SpectralLossConfig = DEFAULT_SPECTRAL):
    """Batch-mean objective as a graph, plus the mean of each loss term.

    Each segment: MFCC -> reservoir (constant) -> bottleneck (relaxed sample,
    or the posterior itself in pretraining) -> vocoder, compared with the
    first 320*S samples of the segment.
    """
    dtype = model.dtype
    vae, voc = model.vae, model.vocoder
    omega = update_concentration(vae.theta(), vae.alpha, model.n_frames_total)
    total = spec_sum = kl_sum = f0_sum = None
    n = len(segments)
    for group in group_by_length(segments):
        feats = np.stack([compute_mfcc(s.wave).frames for s in group])
        states = run_reservoir(model.reservoir, feats).states.astype(dtype)
        n_frames = states.shape[1]
        n_out = 320 * n_frames
        target = np.stack([s.wave[:n_out] for s in group]).astype(dtype)
        logits = vae.logits(states)
        log_probs = ad.log_softmax(logits, axis=-1)
        probs = ad.exp(log_probs)
        z = probs if pretrain else gumbel_softmax_sample(None, tau, rng, log_probs=log_probs)
        z = apply_jitter(z, jitter, rng)
        wave, c = voc.synthesize(quantize_output(z, vae.codebook), [s.speaker for s in group], rng)
        l_spec = spectral_loss_graph(target, wave, loss_cfg)
        l_kl = kl_loss(probs, omega, vae.alpha, n_out, model.n_frames_total)
        if use_f0:
            ref = np.stack([upsample_f0(estimate_f0(s.wave[:n_out]), n_out) for s in group])
            l_f0 = f0_loss_graph(c[:, 0, :], ref)
            per = (l_spec + l_f0) * 0.5 + l_kl * kl_weight
            f0_sum = _acc(f0_sum, ad.tsum(l_f0))
        else:
            per = l_spec + l_kl * kl_weight
        total = _acc(total, ad.tsum(per))
        spec_sum = _acc(spec_sum, ad.tsum(l_spec))
        kl_sum = _acc(kl_sum, ad.tsum(l_kl))
    parts = {
        "l_spec": float(spec_sum.data) / n,
        "l_kl": float(kl_sum.data) / n,
        "l_f0": None if f0_sum is None else float(f0_sum.data) / n,
    }
    return total * (1.0 / n), parts


def _acc(acc, term):
    return term if acc is None else acc + term


# ---------------------------------------------------------------------------
# Loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: Model
    adam: AdamState
    iteration: int
    log: list
    rng: np.random.Generator


def train(corpus: Corpus, cfg: TrainConfig, log_path=None, on_checkpoint=None) -> TrainResult:
    """Run ``cfg.total_iters`` optimizer steps.

    ``on_checkpoint(result)`` is called every ``checkpoint_every`` iterations
    and once after the final one. Raises TrainingAborted on a non-finite loss
    or gradient.
    """
    if len(corpus) == 0:
        raise ConfigError("empty corpus")
    master = np.random.default_rng(cfg.seed)
    model = Model(cfg, corpus.speakers, corpus.total_unit_frames(), master)
    params = model.parameters()
    adam = AdamState(cfg.beta1, cfg.beta2, cfg.adam_eps)
    log: list[LossReport] = []
    result = TrainResult(model, adam, 0, log, master)

    log_fh = writer = None
    if log_path is not None:
        log_fh = open(log_path, "w", newline="", encoding="utf-8")
        writer = csv.writer(log_fh, lineterminator="\n")
        writer.writerow(LOG_HEADER)
    try:
        for it in range(cfg.total_iters):
            segments = draw_batch(corpus, cfg, it)
            rng = np.random.default_rng([cfg.seed, it, 2])
            lr, tau = lr_at(it, cfg), tau_at(it, cfg)
            for p in params.values():
                p.grad = None
            loss, parts = batch_objective(
                model, segments, rng, pretrain=it < cfg.pretrain_iters, tau=tau,
                kl_weight=cfg.kl_weight, use_f0=cfg.f0_loss, jitter=cfg.jitter)
            report = LossReport(it, lr, tau, parts["l_spec"], parts["l_kl"], parts["l_f0"], float(loss.data))
            log.append(report)
            if writer is not None:
                writer.writerow(report.row())
            if not report.is_finite():
                raise TrainingAborted(it, report)
            ad.backward(loss)
            grads = {k: p.grad for k, p in params.items() if p.grad is not None}
            try:
                for name, g in grads.items():
                    if not np.all(np.isfinite(g)):
                        raise NumericError(f"non-finite gradient for parameter {name}")
                clip_gradients(grads, cfg.grad_clip)
                adam_step(params, grads, adam, lr)
            except NumericError as exc:
                raise TrainingAborted(it, f"{report} ({exc})") from exc
            result.iteration = it + 1
            last = it + 1 == cfg.total_iters
            if on_checkpoint is not None and (last or (it + 1) % cfg.checkpoint_every == 0):
                on_checkpoint(result)
        if cfg.total_iters == 0 and on_checkpoint is not None:
            on_checkpoint(result)
    finally:
        if log_fh is not None:
            log_fh.close()
    return result
