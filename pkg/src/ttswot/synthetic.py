"""Formant-synthesized pseudo-speech corpus with exact gold labels.

Phones are 150 ms long: two-formant vowels built from harmonics of the
speaker's pitch, or band-passed noise fricatives. Every speaker scales all
formant and band frequencies by a fixed factor in [0.9, 1.1]. Utterance k
of a sentence is spoken by speaker k, so each sentence exists once per speaker
and across-speaker ABX triples can be formed. Sentences come in minimal
pairs that differ in a single phone.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.signal

from .dsp import SAMPLE_RATE, write_wav

PHONE_SEC = 0.15
EDGE_SILENCE_SEC = 0.05
RAMP_SEC = 0.01
VOWEL_RMS = 0.1
FRICATIVE_RMS = 0.03
MAX_PHONES = 12

# (kind, parameters): vowels give (F1, F2), fricatives a noise band (lo, hi).
PHONE_INVENTORY = (
    ("a", "vowel", (730.0, 1090.0)),
    ("s", "fricative", (4500.0, 7000.0)),
    ("i", "vowel", (270.0, 2290.0)),
    ("S", "fricative", (2200.0, 4000.0)),
    ("u", "vowel", (300.0, 870.0)),
    ("f", "fricative", (1200.0, 3000.0)),
    ("e", "vowel", (530.0, 1840.0)),
    ("x", "fricative", (900.0, 1800.0)),
    ("o", "vowel", (570.0, 840.0)),
    ("T", "fricative", (5500.0, 7500.0)),
    ("E", "vowel", (660.0, 1720.0)),
    ("h", "fricative", (500.0, 6000.0)),
)


@dataclass(frozen=True)
class Speaker:
    name: str
    formant_scale: float
    pitch_hz: float


@dataclass
class SyntheticCorpus:
    directory: Path
    utt_ids: list
    gold: dict  # utt_id -> list of phone symbols
    utt2spk: dict  # utt_id -> speaker name
    speakers: list
    triples: list  # (a_utt, b_utt, x_utt)

    def wav_path(self, utt_id: str) -> Path:
        return self.directory / f"{utt_id}.wav"


def _ramp(n: int) -> np.ndarray:
    k = min(int(RAMP_SEC * SAMPLE_RATE), n // 2)
    env = np.ones(n)
    if k > 0:
        r = 0.5 - 0.5 * np.cos(np.pi * np.arange(k) / k)
        env[:k] = r
        env[n - k :] = r[::-1]
    return env


def _formant_gain(freqs: np.ndarray, f1: float, f2: float) -> np.ndarray:
    """Magnitude of two cascaded resonances (bandwidths 80 and 120 Hz)."""
    gain = np.ones_like(freqs)
    for fc, bw in ((f1, 80.0), (f2, 120.0)):
        gain *= fc**2 / np.sqrt((fc**2 - freqs**2) ** 2 + (bw * freqs) ** 2)
    return gain


def synth_vowel(f1: float, f2: float, pitch_hz: float, n_samples: int, phase0: float = 0.0):
    """Harmonics of ``pitch_hz`` below 7.5 kHz weighted by a two-formant envelope.

    Returns the signal and the fundamental's phase after the last sample so
    consecutive vowels join without a phase jump.
    """
    n_harm = int(7500.0 // pitch_hz)
    h = np.arange(1, n_harm + 1, dtype=np.float64)
    amps = _formant_gain(h * pitch_hz, f1, f2) / h
    phase = phase0 + 2 * np.pi * pitch_hz * np.arange(n_samples) / SAMPLE_RATE
    x = np.sin(np.outer(phase, h)) @ amps
    x *= VOWEL_RMS / max(np.sqrt(np.mean(x**2)), 1e-12)
    end_phase = phase0 + 2 * np.pi * pitch_hz * n_samples / SAMPLE_RATE
    return x, float(np.mod(end_phase, 2 * np.pi))


def synth_fricative(lo: float, hi: float, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    hi = min(hi, 0.95 * SAMPLE_RATE / 2)
    sos = scipy.signal.butter(4, [lo, hi], btype="bandpass", fs=SAMPLE_RATE, output="sos")
    x = scipy.signal.sosfilt(sos, rng.standard_normal(n_samples + 256))[256:]
    return x * (FRICATIVE_RMS / max(np.sqrt(np.mean(x**2)), 1e-12))


def synth_utterance(phones, speaker: Speaker, rng: np.random.Generator) -> np.ndarray:
    n_phone = int(PHONE_SEC * SAMPLE_RATE)
    n_edge = int(EDGE_SILENCE_SEC * SAMPLE_RATE)
    parts = [np.zeros(n_edge)]
    phase = 0.0
    table = {sym: (kind, params) for sym, kind, params in PHONE_INVENTORY}
    for sym in phones:
        kind, (a, b) = table[sym]
        if kind == "vowel":
            x, phase = synth_vowel(a * speaker.formant_scale, b * speaker.formant_scale,
                                   speaker.pitch_hz, n_phone, phase)
        else:
            x = synth_fricative(a * speaker.formant_scale, b * speaker.formant_scale, n_phone, rng)
        parts.append(x * _ramp(n_phone))
    parts.append(np.zeros(n_edge))
    return np.concatenate(parts)


def make_speakers(seed: int, n_speakers: int) -> list[Speaker]:
    rng = np.random.default_rng([seed, 0])
    scales = rng.uniform(0.9, 1.1, size=n_speakers)
    pitches = rng.uniform(100.0, 220.0, size=n_speakers)
    return [Speaker(f"spk{k}", round(float(s), 4), round(float(p), 2))
            for k, (s, p) in enumerate(zip(scales, pitches))]


def make_sentences(seed: int, n_sentences: int, n_phones: int, min_len: int = 6,
                   max_len: int = 10) -> list[list[str]]:
    """Random phone strings alternating fricatives and vowels where both exist.

    Sentence 2j+1 differs from sentence 2j in one phone of the same kind.
    """
    rng = np.random.default_rng([seed, 1])
    inventory = PHONE_INVENTORY[:n_phones]
    by_kind = {}
    for sym, kind, _ in inventory:
        by_kind.setdefault(kind, []).append(sym)
    kinds = sorted(by_kind)
    sentences = []
    while len(sentences) < n_sentences:
        length = int(rng.integers(min_len, max_len + 1))
        first = int(rng.integers(len(kinds)))
        slots = [by_kind[kinds[(first + i) % len(kinds)]] for i in range(length)]
        base = [pool[int(rng.integers(len(pool)))] for pool in slots]
        sentences.append(base)
        if len(sentences) >= n_sentences:
            break
        positions = [i for i in range(length) if len(slots[i]) > 1]
        twin = list(base)
        if positions:
            pos = positions[int(rng.integers(len(positions)))]
            others = [s for s in slots[pos] if s != base[pos]]
            twin[pos] = others[int(rng.integers(len(others)))]
        sentences.append(twin)
    return sentences


def generate_synthetic_corpus(seed: int, n_speakers: int, n_phones: int, n_utts: int, out_dir,
                              max_triples: int = 500) -> SyntheticCorpus:
    """Write WAVs plus gold.tsv, utt2spk.csv, speakers.csv and abx.csv to ``out_dir``."""
    if not 1 <= n_phones <= MAX_PHONES:
        raise ValueError(f"n_phones must be in [1, {MAX_PHONES}]")
    if n_speakers < 1 or n_utts < 0:
        raise ValueError("need at least one speaker and a non-negative utterance count")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    speakers = make_speakers(seed, n_speakers)
    n_sentences = -(-n_utts // n_speakers) if n_utts else 0
    sentences = make_sentences(seed, n_sentences, n_phones)

    utt_ids, gold, utt2spk, index = [], {}, {}, {}
    for u in range(n_utts):
        k, s = divmod(u, n_speakers)
        utt = f"utt{u:04d}"
        rng = np.random.default_rng([seed, 2, u])
        x = synth_utterance(sentences[k], speakers[s], rng)
        write_wav(out / f"{utt}.wav", x)
        utt_ids.append(utt)
        gold[utt] = sentences[k]
        utt2spk[utt] = speakers[s].name
        index[(k, s)] = utt

    triples = []
    for (k, s1), a in index.items():
        twin = k ^ 1
        for s2 in range(n_speakers):
            if s2 == s1 or (k, s2) not in index or (twin, s1) not in index:
                continue
            if sentences[twin] == sentences[k]:
                continue
            triples.append((a, index[(twin, s1)], index[(k, s2)]))
    if len(triples) > max_triples:
        rng = np.random.default_rng([seed, 3])
        keep = np.sort(rng.choice(len(triples), size=max_triples, replace=False))
        triples = [triples[i] for i in keep]

    with open(out / "gold.tsv", "w", encoding="utf-8", newline="") as fh:
        for utt in utt_ids:
            fh.write(f"{utt}\t{' '.join(gold[utt])}\n")
    with open(out / "utt2spk.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["utt_id", "speaker_id"])
        w.writerows((utt, utt2spk[utt]) for utt in utt_ids)
    with open(out / "speakers.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["speaker_id", "formant_scale", "pitch_hz"])
        w.writerows((sp.name, sp.formant_scale, sp.pitch_hz) for sp in speakers)
    with open(out / "abx.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["a_path", "b_path", "x_path"])
        w.writerows((f"{a}.wav", f"{b}.wav", f"{x}.wav") for a, b, x in triples)
    return SyntheticCorpus(out, utt_ids, gold, utt2spk, speakers, triples)


def read_gold(path) -> dict:
    gold = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line:
                utt, _, phones = line.partition("\t")
                gold[utt] = phones.split()
    return gold
