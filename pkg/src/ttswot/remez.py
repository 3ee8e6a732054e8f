"""Parks-McClellan equiripple FIR design (type I, linear phase) and filtering.

The exchange loop works on the cosine polynomial
A(w) = sum_k a_k cos(k w) of a symmetric filter with ``order + 1`` taps.
Reference set values are interpolated in barycentric form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dsp import SAMPLE_RATE
from .errors import ConfigError, ConvergenceError

NYQUIST = SAMPLE_RATE / 2
ORDER = 10
MAX_ITER = 250
TOLERANCE = 1e-6
GRID_DENSITY = 64


@dataclass(frozen=True)
class BandSpec:
    bands: tuple  # ((f_lo, f_hi), ...) in Hz
    desired: tuple  # gain per band
    weights: tuple | None = None

    def __post_init__(self):
        bands = tuple((float(lo), float(hi)) for lo, hi in self.bands)
        if len(bands) != len(self.desired):
            raise ConfigError("one desired gain per band required")
        weights = self.weights if self.weights is not None else (1.0,) * len(bands)
        if len(weights) != len(bands):
            raise ConfigError("one weight per band required")
        prev = -np.inf
        for lo, hi in bands:
            if not (0.0 <= lo < hi <= NYQUIST) or lo < prev:
                raise ConfigError(f"bands must be ascending, disjoint and within [0, {NYQUIST}]")
            prev = hi
        object.__setattr__(self, "bands", bands)
        object.__setattr__(self, "desired", tuple(float(d) for d in self.desired))
        object.__setattr__(self, "weights", tuple(float(w) for w in weights))


@dataclass(frozen=True)
class FIRFilter:
    taps: np.ndarray
    ripple: float = 0.0  # weighted minimax error of the converged design
    iterations: int = 0
    extremal_hz: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def order(self) -> int:
        return len(self.taps) - 1


# Band edges of the two voiced/voiceless filter pairs.
VOICED_LOWPASS = BandSpec(((0, 5000), (7000, 8000)), (1, 0))
VOICED_HIGHPASS = BandSpec(((0, 5000), (7000, 8000)), (0, 1))
VOICELESS_LOWPASS = BandSpec(((0, 1000), (3000, 8000)), (1, 0))
VOICELESS_HIGHPASS = BandSpec(((0, 1000), (3000, 8000)), (0, 1))


def _barycentric_weights(x: np.ndarray) -> np.ndarray:
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    # scale each factor to avoid under/overflow for larger reference sets
    return 1.0 / np.prod(2.0 * diff, axis=1)


def _build_grid(spec: BandSpec, n_coef: int, density: int):
    """Dense frequency grid (radians) with desired gain, weight and band index."""
    total = sum(hi - lo for lo, hi in spec.bands)
    n_total = max(density * n_coef, 8 * len(spec.bands))
    freqs, desired, weight, band_id = [], [], [], []
    for k, ((lo, hi), d, w) in enumerate(zip(spec.bands, spec.desired, spec.weights)):
        n = max(int(round(n_total * (hi - lo) / total)), 3)
        freqs.append(np.linspace(lo, hi, n) / NYQUIST * np.pi)
        desired.append(np.full(n, d))
        weight.append(np.full(n, w))
        band_id.append(np.full(n, k))
    return tuple(np.concatenate(v) for v in (freqs, desired, weight, band_id))


def _local_extrema(err: np.ndarray, band_id: np.ndarray) -> np.ndarray:
    """Indices of signed local extrema (maxima where err > 0, minima where err < 0).

    Band edges count when the in-band neighbour does not exceed them in the
    same direction.
    """
    idx = []
    n = len(err)
    for i in range(n):
        s = 1.0 if err[i] >= 0 else -1.0
        left_ok = i == 0 or band_id[i - 1] != band_id[i] or s * err[i] >= s * err[i - 1]
        right_ok = i == n - 1 or band_id[i + 1] != band_id[i] or s * err[i] >= s * err[i + 1]
        if left_ok and right_ok:
            idx.append(i)
    return np.array(idx, dtype=int)


def _alternating_subset(cand: np.ndarray, err: np.ndarray, r: int) -> np.ndarray:
    """Reduce candidates to an alternating set of exactly r points."""
    # merge runs of equal sign, keeping the largest |err| of each run
    kept = []
    for i in cand:
        if kept and np.sign(err[i]) == np.sign(err[kept[-1]]):
            if abs(err[i]) > abs(err[kept[-1]]):
                kept[-1] = i
        else:
            kept.append(i)
    # drop the smaller end point until r remain (keeps alternation)
    while len(kept) > r:
        if abs(err[kept[0]]) < abs(err[kept[-1]]):
            kept.pop(0)
        else:
            kept.pop()
    return np.array(kept, dtype=int)


def remez_design(spec: BandSpec, order: int = ORDER, max_iter: int = MAX_ITER,
                 tol: float = TOLERANCE, density: int = GRID_DENSITY) -> FIRFilter:
    """Chebyshev-optimal symmetric FIR via the Remez exchange algorithm."""
    if len(spec.bands) < 1:
        raise ConfigError("at least one band required")
    if order % 2 or order < 2:
        raise ConfigError("order must be even (type-I linear phase)")
    half = order // 2
    n_coef = half + 1
    r = half + 2

    omega, desired, weight, band_id = _build_grid(spec, n_coef, density)
    x_grid = np.cos(omega)
    ext = np.round(np.linspace(0, len(omega) - 1, r)).astype(int)

    spread = np.inf
    delta = 0.0
    for it in range(1, max_iter + 1):
        x = x_grid[ext]
        bw = _barycentric_weights(x)
        signs = (-1.0) ** np.arange(r)
        num = np.dot(bw, desired[ext])
        den = np.dot(bw, signs / weight[ext])
        delta = num / den
        values = desired[ext] - signs * delta / weight[ext]

        # interpolate A(x) through the first r-1 reference points
        xi, vi = x[:-1], values[:-1]
        wi = _barycentric_weights(xi)
        amp = _barycentric_eval(x_grid, xi, vi, wi)
        err = weight * (desired - amp)

        cand = _local_extrema(err, band_id)
        cand = cand[np.abs(err[cand]) >= abs(delta) * (1 - 1e-9)] if abs(delta) > 0 else cand
        if len(cand) < r:
            cand = np.union1d(cand, ext)
        new_ext = _alternating_subset(cand, err, r)
        if len(new_ext) < r:
            new_ext = ext
        emax = np.max(np.abs(err))
        ext = new_ext
        if emax < 1e-12:
            spread = 0.0
            break
        # distance from equiripple: the grid maximum versus the levelled error
        spread = (emax - abs(delta)) / emax
        if spread < tol:
            break
    else:
        raise ConvergenceError(
            f"Remez exchange did not converge in {max_iter} iterations (spread {spread:.3g})",
            spread=spread,
        )

    taps = _taps_from_amplitude(lambda w: _barycentric_eval(np.cos(w), xi, vi, wi), half)
    # one last evaluation so the reported ripple matches the returned taps
    resp = _amplitude(taps, omega)
    ripple = float(np.max(np.abs(weight * (desired - resp))))
    return FIRFilter(taps=taps, ripple=ripple, iterations=it,
                     extremal_hz=omega[ext] / np.pi * NYQUIST)


def _barycentric_eval(x, xi, vi, wi):
    x = np.asarray(x, dtype=np.float64)
    diff = x[:, None] - xi[None, :]
    exact = np.isclose(diff, 0.0, atol=1e-15, rtol=0.0)
    diff = np.where(exact, 1.0, diff)
    terms = wi / diff
    out = (terms @ vi) / terms.sum(axis=1)
    hit_rows, hit_cols = np.nonzero(exact)
    out[hit_rows] = vi[hit_cols]
    return out


def _taps_from_amplitude(amp_fn, half: int) -> np.ndarray:
    """Recover symmetric taps from A(w) sampled at 2*half+1 uniform frequencies."""
    n = 2 * half + 1
    w = 2 * np.pi * np.arange(n) / n
    a = amp_fn(w)
    k = np.arange(n) - half
    taps = np.real(np.exp(1j * np.outer(k, w)) @ a) / n
    # enforce exact symmetry
    return 0.5 * (taps + taps[::-1])


def _amplitude(taps: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """Zero-phase amplitude A(w) of a symmetric filter."""
    half = (len(taps) - 1) // 2
    k = np.arange(1, half + 1)
    return taps[half] + 2.0 * np.cos(np.outer(omega, k)) @ taps[half - k]


def alternation_count(f: FIRFilter, spec: BandSpec, rel_tol: float = 1e-4,
                      density: int = 512) -> int:
    """Number of alternating extrema whose |error| equals the ripple within rel_tol."""
    omega, desired, weight, band_id = _build_grid(spec, len(f.taps), density)
    err = weight * (desired - _amplitude(f.taps, omega))
    peak = np.max(np.abs(err))
    cand = _local_extrema(err, band_id)
    cand = cand[np.abs(err[cand]) >= peak * (1 - rel_tol)]
    count, last = 0, 0.0
    for i in cand:
        s = np.sign(err[i])
        if s != last:
            count += 1
            last = s
    return count


def freq_response(f: FIRFilter | np.ndarray, n_points: int) -> np.ndarray:
    """|H(f)| on ``n_points`` uniformly spaced frequencies from 0 to 8000 Hz inclusive."""
    taps = f.taps if isinstance(f, FIRFilter) else np.asarray(f, dtype=np.float64)
    if n_points < len(taps):
        raise ConfigError("n_points must be at least the number of taps")
    freqs = np.linspace(0.0, NYQUIST, n_points)
    phase = np.exp(-2j * np.pi * np.outer(freqs, np.arange(len(taps))) / SAMPLE_RATE)
    return np.abs(phase @ taps)


def apply_fir(f: FIRFilter | np.ndarray, x) -> np.ndarray:
    """Causal convolution, zero initial state, output as long as the input."""
    taps = f.taps if isinstance(f, FIRFilter) else np.asarray(f, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    return np.convolve(x, taps)[: len(x)]


def design_pairs(order: int = ORDER) -> dict[str, FIRFilter]:
    """The voiced and voiceless low/high-pass filters used by the vocoder."""
    return {
        "voiced_lowpass": remez_design(VOICED_LOWPASS, order),
        "voiced_highpass": remez_design(VOICED_HIGHPASS, order),
        "voiceless_lowpass": remez_design(VOICELESS_LOWPASS, order),
        "voiceless_highpass": remez_design(VOICELESS_HIGHPASS, order),
    }


BAND_SPECS = {
    "voiced_lowpass": VOICED_LOWPASS,
    "voiced_highpass": VOICED_HIGHPASS,
    "voiceless_lowpass": VOICELESS_LOWPASS,
    "voiceless_highpass": VOICELESS_HIGHPASS,
}
