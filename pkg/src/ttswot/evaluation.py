"""Encoding-side metrics: edit distance, posterior DTW, ABX error, bitrate."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .abcd_vae import UnitSequence
from .errors import MetricError

KL_FLOOR = 1e-10


def levenshtein(a: Sequence, b: Sequence) -> int:
    """Edit distance with unit-cost substitution, insertion and deletion."""
    a, b = list(a), list(b)
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def kl_matrix(pa: np.ndarray, pb: np.ndarray) -> np.ndarray:
    """D_KL(pa_i || pb_j) for all row pairs, probabilities floored at 1e-10."""
    pa = np.asarray(pa, dtype=np.float64)
    pb = np.asarray(pb, dtype=np.float64)
    la = np.log(np.maximum(pa, KL_FLOOR))
    lb = np.log(np.maximum(pb, KL_FLOOR))
    neg_entropy = np.sum(pa * la, axis=1)
    cross = pa @ lb.T
    return np.maximum(neg_entropy[:, None] - cross, 0.0)


def dtw_kl(pa, pb) -> float:
    """Length-normalized DTW cost with KL local distance.

    Steps (1,0), (0,1), (1,1). The path with the lowest total cost is chosen
    (ties go to the shorter path) and its cost is divided by its length.
    """
    pa = np.atleast_2d(np.asarray(pa, dtype=np.float64))
    pb = np.atleast_2d(np.asarray(pb, dtype=np.float64))
    if pa.shape[0] == 0 or pb.shape[0] == 0 or pa.size == 0 or pb.size == 0:
        raise MetricError("dtw_kl needs two non-empty sequences")
    d = kl_matrix(pa, pb)
    n, m = d.shape
    cost = np.full((n, m), np.inf)
    length = np.zeros((n, m), dtype=np.int64)
    for i in range(n):
        for j in range(m):
            if i == 0 and j == 0:
                cost[i, j], length[i, j] = d[0, 0], 1
                continue
            best = (np.inf, 0)
            for pi, pj in ((i - 1, j), (i, j - 1), (i - 1, j - 1)):
                if pi >= 0 and pj >= 0:
                    cand = (cost[pi, pj], length[pi, pj])
                    if cand < best:
                        best = cand
            cost[i, j] = best[0] + d[i, j]
            length[i, j] = best[1] + 1
    return float(cost[-1, -1] / length[-1, -1])


def abx_error(triples, dist: Callable) -> float:
    """Percentage of (A, B, X) triples where X is closer to B than to A (ties count half)."""
    triples = list(triples)
    if not triples:
        raise MetricError("abx_error needs at least one triple")
    score = 0.0
    for a, b, x in triples:
        dax, dbx = dist(a, x), dist(b, x)
        if dbx < dax:
            score += 1.0
        elif dbx == dax:
            score += 0.5
    return 100.0 * score / len(triples)


def _frames(seq) -> np.ndarray:
    if isinstance(seq, UnitSequence):
        return seq.expand()
    return np.asarray(seq, dtype=np.int64).ravel()


def usage_counts(unit_seqs) -> dict:
    values, counts = np.unique(np.concatenate([_frames(s) for s in unit_seqs] or [np.zeros(0, int)]),
                               return_counts=True)
    return dict(zip(values.tolist(), counts.tolist()))


def bitrate(unit_seqs, total_duration_sec: float) -> float:
    """Unigram information rate in bits per second over per-frame symbols."""
    seqs = list(unit_seqs)
    frames = np.concatenate([_frames(s) for s in seqs]) if seqs else np.zeros(0, int)
    if frames.size == 0:
        raise MetricError("bitrate of an empty corpus is undefined")
    if not total_duration_sec > 0:
        raise MetricError("total duration must be positive")
    _, counts = np.unique(frames, return_counts=True)
    p = counts / counts.sum()
    bits = -np.sum(counts * np.log2(p))
    return float(bits / total_duration_sec)


def effective_categories(unit_seqs) -> float:
    """exp of the entropy of the per-frame category distribution."""
    counts = np.array(list(usage_counts(unit_seqs).values()), dtype=np.float64)
    if counts.size == 0:
        raise MetricError("no frames")
    p = counts / counts.sum()
    return float(np.exp(-np.sum(p * np.log(p))))
