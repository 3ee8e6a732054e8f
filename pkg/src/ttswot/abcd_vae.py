"""Attention-based categorical bottleneck with a Dirichlet prior.

A query MLP maps each reservoir frame to a vector that is compared, by a
scaled dot product, with the columns of a codebook. The same codebook is
read out with the (relaxed) one-hot assignment, so logits and output share
storage. The KL part of the objective follows the mean-field
Dirichlet-Categorical treatment with a learnable simplex vector theta.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.special

from . import autodiff as ad
from .autodiff import Tensor
from .errors import FormatError, NumericError, ParameterError

N_CODES = 256
CODE_DIM = 128
HIDDEN = 128
JITTER_PROB = 0.12


@dataclass(frozen=True)
class UnitSequence:
    units: np.ndarray
    durations: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "units", np.asarray(self.units, dtype=np.int64))
        object.__setattr__(self, "durations", np.asarray(self.durations, dtype=np.int64))

    def __len__(self):
        return len(self.units)

    @property
    def n_frames(self) -> int:
        return int(self.durations.sum())

    def expand(self) -> np.ndarray:
        """Per-frame category sequence."""
        return np.repeat(self.units, self.durations)

    def to_text(self) -> str:
        return " ".join(f"{u}:{d}" for u, d in zip(self.units, self.durations))

    @classmethod
    def from_text(cls, text: str) -> "UnitSequence":
        units, durs = [], []
        for tok in text.split():
            u, d = tok.split(":")
            units.append(int(u))
            durs.append(int(d))
        return cls(np.array(units), np.array(durs))


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class AbcdVae:
    """Parameters: query MLP, codebook (code_dim x n_codes) and theta logits."""

    def __init__(self, rng: np.random.Generator, input_dim: int = 2048, hidden: int = HIDDEN,
                 code_dim: int = CODE_DIM, n_codes: int = N_CODES, alpha: float = 1.0,
                 dtype=np.float64):
        self.input_dim = input_dim
        self.hidden = hidden
        self.code_dim = code_dim
        self.n_codes = n_codes
        self.alpha = np.full(n_codes, float(alpha))
        shapes = {
            "query.w1": ((input_dim, hidden), input_dim),
            "query.b1": ((hidden,), None),
            "query.w2": ((hidden, hidden), hidden),
            "query.b2": ((hidden,), None),
            "query.w_out": ((hidden, code_dim), hidden),
            "query.b_out": ((code_dim,), None),
        }
        self.params: dict[str, Tensor] = {}
        for name, (shape, fan_in) in shapes.items():
            value = _uniform(rng, shape, fan_in) if fan_in else np.zeros(shape)
            self.params[name] = Tensor(value.astype(dtype), requires_grad=True, name=name)
        self.params["codebook"] = Tensor(
            rng.standard_normal((code_dim, n_codes)).astype(dtype), requires_grad=True, name="codebook")
        self.params["theta_logits"] = Tensor(np.zeros(n_codes, dtype=dtype), requires_grad=True,
                                             name="theta_logits")

    @property
    def codebook(self) -> Tensor:
        return self.params["codebook"]

    def query(self, x) -> Tensor:
        p = self.params
        x = ad.as_tensor(x, p["query.w1"])
        h = ad.tanh(x @ p["query.w1"] + p["query.b1"])
        h = ad.tanh(h @ p["query.w2"] + p["query.b2"])
        return h @ p["query.w_out"] + p["query.b_out"]

    def logits(self, x) -> Tensor:
        q = self.query(x)
        return (q @ self.codebook) * (1.0 / np.sqrt(self.code_dim))

    def theta(self) -> Tensor:
        return ad.softmax(self.params["theta_logits"])

    def omega(self, n_frames_total: int) -> Tensor:
        return update_concentration(self.theta(), self.alpha, n_frames_total)


# ---------------------------------------------------------------------------
# Posterior and sampling
# ---------------------------------------------------------------------------


def scaled_logits(query, codebook) -> Tensor:
    codebook = ad.as_tensor(codebook)
    return ad.matmul(ad.as_tensor(query, codebook), codebook) * (1.0 / np.sqrt(codebook.shape[0]))


def encode_posterior(vae_or_query, codebook=None, x=None) -> Tensor:
    """Row-softmax of scaled query/codebook similarities.

    Either ``encode_posterior(vae, x=states)`` or
    ``encode_posterior(query_vectors, codebook)``.
    """
    if isinstance(vae_or_query, AbcdVae):
        logits = vae_or_query.logits(x)
    else:
        logits = scaled_logits(vae_or_query, codebook)
    bad = ~np.isfinite(logits.data)
    if bad.any():
        frame = int(np.argwhere(bad)[0][-2]) if logits.ndim >= 2 else 0
        raise NumericError(f"non-finite posterior logits at frame {frame}")
    return ad.softmax(logits, axis=-1)


def gumbel_softmax_sample(probs, tau: float, rng: np.random.Generator, log_probs=None) -> Tensor:
    """softmax((log p + g) / tau) with g ~ Gumbel(0, 1)."""
    if not tau > 0:
        raise ParameterError(f"temperature must be positive, got {tau}")
    if log_probs is None:
        log_probs = ad.log(ad.clip(ad.as_tensor(probs), 1e-30, 1.0))
    log_probs = ad.as_tensor(log_probs)
    u = rng.random(log_probs.shape)
    gumbel = -np.log(-np.log(np.clip(u, 1e-300, 1.0)))
    return ad.softmax((log_probs + gumbel.astype(log_probs.dtype)) * (1.0 / tau), axis=-1)


def jitter_indices(n_frames: int, p: float, rng: np.random.Generator, batch: int | None = None) -> np.ndarray:
    """Source frame index for every frame after jitter (identity where not replaced)."""
    shape = (n_frames,) if batch is None else (batch, n_frames)
    replace = rng.random(shape) < p
    go_left = rng.random(shape) < 0.5
    idx = np.broadcast_to(np.arange(n_frames), shape)
    neighbour = np.where(go_left, idx - 1, idx + 1)
    # a missing neighbour at an edge is replaced by the existing one
    neighbour = np.where(neighbour < 0, 1, neighbour)
    neighbour = np.where(neighbour >= n_frames, n_frames - 2, neighbour)
    if n_frames == 1:
        neighbour = np.zeros(shape, dtype=int)
    return np.where(replace, neighbour, idx)


def apply_jitter(z, p: float, rng: np.random.Generator) -> Tensor:
    """Replace each frame by a random adjacent frame with probability p.

    z has shape (S, K) or (B, S, K).
    """
    z = ad.as_tensor(z)
    n_frames = z.shape[-2]
    if z.ndim == 2:
        return ad.gather(z, jitter_indices(n_frames, p, rng), axis=0)
    batch = z.shape[0]
    idx = jitter_indices(n_frames, p, rng, batch=batch)
    flat = idx + n_frames * np.arange(batch)[:, None]
    rows = ad.reshape(z, (batch * n_frames,) + z.shape[2:])
    return ad.reshape(ad.gather(rows, flat.ravel(), axis=0), z.shape)


def quantize_output(z, codebook) -> Tensor:
    """z M^T: each row is a convex mix of codebook columns."""
    codebook = ad.as_tensor(codebook)
    return ad.matmul(ad.as_tensor(z, codebook), ad.transpose(codebook))


# ---------------------------------------------------------------------------
# KL terms
# ---------------------------------------------------------------------------


def update_concentration(theta, alpha, n_frames_total) -> Tensor:
    """omega_k = alpha_k + N theta_k."""
    theta = ad.as_tensor(theta)
    return ad.as_tensor(alpha, theta) + theta * float(n_frames_total)


def kl_dirichlet(omega, alpha) -> Tensor:
    """KL[Dir(omega) || Dir(alpha)] in closed form."""
    omega = ad.as_tensor(omega)
    alpha_arr = np.asarray(alpha, dtype=omega.dtype)
    if np.any(omega.data <= 0) or np.any(alpha_arr <= 0):
        raise ParameterError("Dirichlet concentrations must be positive")
    omega_sum = ad.tsum(omega)
    alpha_sum = float(alpha_arr.sum())
    const = float(np.sum(scipy.special.gammaln(alpha_arr)) - scipy.special.gammaln(alpha_sum))
    return (ad.lgamma(omega_sum) - ad.tsum(ad.lgamma(omega)) + const
            + ad.tsum((omega - alpha_arr) * (ad.digamma(omega) - ad.digamma(omega_sum))))


def expected_log_pi(omega) -> Tensor:
    """E_q[log pi_k] = psi(omega_k) - psi(sum omega)."""
    omega = ad.as_tensor(omega)
    return ad.digamma(omega) - ad.digamma(ad.tsum(omega))


def kl_categorical_term(p, omega) -> Tensor:
    """E_q[log q(z_i)] - E_q[log p(z_i | pi)] for every row of p (last axis = K)."""
    p = ad.as_tensor(p)
    elog = expected_log_pi(ad.as_tensor(omega, p))
    return ad.tsum(ad.xlogx(p), axis=-1) - ad.tsum(p * elog, axis=-1)


def map_sequence(probs) -> np.ndarray:
    """Per-frame argmax; ties go to the lowest category index."""
    data = probs.data if isinstance(probs, Tensor) else np.asarray(probs)
    return np.argmax(data, axis=-1)


def span_lengths(map_seq) -> np.ndarray:
    """Length of the run of equal categories containing each frame."""
    seq = np.asarray(map_seq)
    if seq.size == 0:
        return np.zeros(0, dtype=np.int64)
    change = np.flatnonzero(np.diff(seq) != 0) + 1
    bounds = np.concatenate([[0], change, [len(seq)]])
    lengths = np.diff(bounds)
    return np.repeat(lengths, lengths)


def kl_loss(p, omega, alpha, n_samples: int, n_frames_total: int) -> Tensor:
    """Per-sequence KL objective.

    (1/T) * ((S/N) KL[q(pi)||p(pi)] + sum_i D_{z_i} / U_i), with U_i the
    MAP run length containing frame i (held constant under differentiation).
    p has shape (S, K), giving a scalar, or (B, S, K), giving one value per
    sequence. T is the waveform length in samples.
    """
    p = ad.as_tensor(p)
    omega = ad.as_tensor(omega, p)
    n_frames = p.shape[-2]
    seqs = map_sequence(p).reshape(-1, n_frames)
    spans = np.stack([span_lengths(s) for s in seqs]).reshape(p.shape[:-1]).astype(p.dtype)
    d_z = kl_categorical_term(p, omega)
    frame_term = ad.tsum(d_z * (1.0 / spans), axis=-1)
    dir_term = kl_dirichlet(omega, alpha) * (n_frames / float(n_frames_total))
    return (dir_term + frame_term) * (1.0 / float(n_samples))


def map_decode(probs) -> UnitSequence:
    """Argmax per frame followed by run-length merging."""
    seq = map_sequence(probs)
    if seq.ndim != 1:
        raise ValueError("map_decode expects a single (S, K) posterior sequence")
    if len(seq) == 0:
        return UnitSequence(np.zeros(0), np.zeros(0))
    change = np.flatnonzero(np.diff(seq) != 0) + 1
    starts = np.concatenate([[0], change])
    durations = np.diff(np.concatenate([starts, [len(seq)]]))
    return UnitSequence(seq[starts], durations)


def span_first_rows(probs) -> np.ndarray:
    """Posterior rows at the first frame of every MAP span."""
    data = probs.data if isinstance(probs, Tensor) else np.asarray(probs)
    seq = map_sequence(data)
    change = np.flatnonzero(np.diff(seq) != 0) + 1
    starts = np.concatenate([[0], change])
    return data[starts]


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

POSTERIOR_MAGIC = b"ZPST"


def write_units(path, entries) -> None:
    """One ``<utt_id>\\t<unit:duration> ...`` line per (utt_id, UnitSequence)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for utt, seq in entries:
            fh.write(f"{utt}\t{seq.to_text()}\n")


def read_units(path) -> list[tuple[str, UnitSequence]]:
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            utt, sep, body = line.partition("\t")
            try:
                if not sep:
                    raise ValueError("missing tab separator")
                seq = UnitSequence.from_text(body)
                if np.any(seq.durations < 1) or np.any(seq.units < 0):
                    raise ValueError("durations must be positive and units non-negative")
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
            entries.append((utt, seq))
    return entries


def write_posterior(path, probs) -> None:
    """16-byte header (magic, u32 S, u32 K, u32 reserved = 0) then f32 rows."""
    data = np.ascontiguousarray(probs, dtype="<f4")
    if data.ndim != 2:
        raise ValueError("posterior dump expects an (S, K) matrix")
    with open(path, "wb") as fh:
        fh.write(POSTERIOR_MAGIC)
        fh.write(struct.pack("<III", data.shape[0], data.shape[1], 0))
        fh.write(data.tobytes())


def read_posterior(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != POSTERIOR_MAGIC:
        raise FormatError(f"{path}: not a posterior dump")
    n_rows, n_cols, _ = struct.unpack("<III", raw[4:16])
    body = raw[16:]
    if len(body) != 4 * n_rows * n_cols:
        raise FormatError(f"{path}: size does not match header")
    return np.frombuffer(body, dtype="<f4").reshape(n_rows, n_cols).copy()
