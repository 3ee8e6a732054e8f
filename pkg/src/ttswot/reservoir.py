"""Fixed echo-state network over MFCC frames (100 Hz in, 50 Hz out)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse

from .dsp import FeatureSequence

N_UNITS = 2048
N_INPUTS = 39
DENSITY = 0.1
SPECTRAL_RADIUS = 0.9
INPUT_SCALE = 0.1
POWER_ITERS = 100


@dataclass(frozen=True)
class StateSequence:
    states: np.ndarray  # (n_frames, n_units), 50 Hz
    frame_rate: int = 50

    def __len__(self):
        return self.states.shape[0]


def power_iteration_radius(w, n_iter: int = POWER_ITERS, seed: int = 0) -> float:
    """Spectral radius estimate: mean log growth over the second half of the run.

    Averaging the per-step growth rather than taking the last Rayleigh-like
    ratio keeps the estimate stable when the dominant eigenvalues form a
    complex pair, which is the generic case for random reservoirs.
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(w.shape[0])
    v /= np.linalg.norm(v)
    logs = []
    for _ in range(n_iter):
        v = w @ v
        norm = np.linalg.norm(v)
        if norm == 0.0:
            return 0.0
        v /= norm
        logs.append(np.log(norm))
    return float(np.exp(np.mean(logs[n_iter // 2 :])))


class Reservoir:
    """Sparse random recurrent network, immutable once built."""

    def __init__(
        self,
        seed: int,
        n_units: int = N_UNITS,
        n_inputs: int = N_INPUTS,
        density: float = DENSITY,
        spectral_radius: float = SPECTRAL_RADIUS,
        input_scale: float = INPUT_SCALE,
    ):
        self.seed = int(seed)
        self.n_units = n_units
        self.n_inputs = n_inputs
        self.density = density
        self.spectral_radius = spectral_radius
        self.input_scale = input_scale

        rng = np.random.default_rng(self.seed)
        w_in = rng.uniform(-input_scale, input_scale, size=(n_units, n_inputs))
        mask = rng.random((n_units, n_units)) < density
        values = rng.standard_normal(int(mask.sum()))
        rows, cols = np.nonzero(mask)
        w_rec = scipy.sparse.csr_matrix((values, (rows, cols)), shape=(n_units, n_units))
        radius = power_iteration_radius(w_rec)
        if radius > 0:
            w_rec = w_rec * (spectral_radius / radius)
        w_rec.sort_indices()
        w_in.setflags(write=False)
        for arr in (w_rec.data, w_rec.indices, w_rec.indptr):
            arr.setflags(write=False)
        self.w_in = w_in
        self.w_rec = w_rec

    @property
    def nnz(self) -> int:
        return int(self.w_rec.nnz)

    def estimated_radius(self) -> float:
        return power_iteration_radius(self.w_rec)

    def fingerprint(self) -> bytes:
        """Raw bytes of every weight array, for immutability checks."""
        parts = [self.w_in.tobytes(), self.w_rec.data.tobytes(),
                 self.w_rec.indices.tobytes(), self.w_rec.indptr.tobytes()]
        return b"".join(parts)

    def dense_w_rec(self) -> np.ndarray:
        return self.w_rec.toarray()

    def states(self, feats: np.ndarray, s0: np.ndarray | None = None) -> np.ndarray:
        """Full 100 Hz state trajectory for (n_frames, n_inputs) or (B, n_frames, n_inputs)."""
        feats = np.asarray(feats, dtype=np.float64)
        batched = feats.ndim == 3
        if not batched:
            feats = feats[None]
        batch, n_frames, _ = feats.shape
        drive = feats @ self.w_in.T  # (B, n_frames, n_units)
        s = np.zeros((batch, self.n_units)) if s0 is None else np.array(s0, dtype=np.float64).reshape(batch, self.n_units)
        out = np.empty((batch, n_frames, self.n_units))
        for t in range(n_frames):
            s = np.tanh(drive[:, t] + (self.w_rec @ s.T).T)
            out[:, t] = s
        return out if batched else out[0]


def init_reservoir(seed: int, **kwargs) -> Reservoir:
    return Reservoir(seed, **kwargs)


def run_reservoir(r: Reservoir, feats, s0: np.ndarray | None = None) -> StateSequence:
    """Drive the reservoir and keep every second state (odd 0-based indices)."""
    frames = feats.frames if isinstance(feats, FeatureSequence) else np.asarray(feats)
    if isinstance(feats, FeatureSequence) and feats.frame_rate != 100:
        raise ValueError("reservoir expects 100 Hz features")
    if frames.shape[-2] == 0:
        shape = frames.shape[:-2] + (0, r.n_units)
        return StateSequence(np.zeros(shape))
    full = r.states(frames, s0=s0)
    return StateSequence(full[..., 1::2, :])
