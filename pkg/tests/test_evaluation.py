import filecmp

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_dtw, recursive_edit_distance
from ttswot.abcd_vae import UnitSequence
from ttswot.dsp import estimate_f0
from ttswot.errors import MetricError
from ttswot.evaluation import abx_error, bitrate, dtw_kl, effective_categories, levenshtein
from ttswot.synthetic import Speaker, generate_synthetic_corpus, read_gold, synth_vowel

units = st.lists(st.integers(min_value=0, max_value=3), max_size=7)


# ----------------------------------------------------------------------------
# Levenshtein
# ----------------------------------------------------------------------------


class TestLevenshtein:
    def test_kitten_sitting(self):
        assert levenshtein(list("kitten"), list("sitting")) == 3

    def test_identity_and_empty(self):
        assert levenshtein([1, 2, 3], [1, 2, 3]) == 0
        assert levenshtein([], [4, 4, 4, 4]) == 4

    @settings(max_examples=200, deadline=None)
    @given(a=units, b=units)
    def test_matches_recursion(self, a, b):
        assert levenshtein(a, b) == recursive_edit_distance(a, b)

    @settings(max_examples=200, deadline=None)
    @given(a=units, b=units, c=units)
    def test_metric_axioms(self, a, b, c):
        assert levenshtein(a, b) == levenshtein(b, a)
        assert (levenshtein(a, b) == 0) == (a == b)
        assert levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c)


# ----------------------------------------------------------------------------
# DTW over posteriors
# ----------------------------------------------------------------------------


class TestDtwKl:
    def test_identical_is_zero(self):
        p = np.random.default_rng(0).dirichlet(np.ones(5), size=6)
        assert dtw_kl(p, p) == pytest.approx(0.0, abs=1e-12)

    def test_single_rows(self):
        a, b = np.array([[0.7, 0.2, 0.1]]), np.array([[0.3, 0.3, 0.4]])
        expected = float(np.sum(a * np.log(a / b)))
        assert dtw_kl(a, b) == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    @pytest.mark.parametrize("m", [1, 2, 3, 4])
    def test_brute_force(self, n, m):
        rng = np.random.default_rng(10 * n + m)
        for _ in range(5):
            pa, pb = rng.dirichlet(np.ones(4), size=n), rng.dirichlet(np.ones(4), size=m)
            assert dtw_kl(pa, pb) == pytest.approx(brute_force_dtw(pa, pb), rel=1e-12)

    def test_floor_handles_zeros(self):
        a, b = np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])
        assert dtw_kl(a, b) == pytest.approx(-np.log(1e-10), rel=1e-9)

    def test_nonnegative(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            assert dtw_kl(rng.dirichlet(np.ones(3), size=3), rng.dirichlet(np.ones(3), size=5)) >= 0

    def test_empty(self):
        with pytest.raises(MetricError):
            dtw_kl(np.zeros((0, 3)), np.ones((2, 3)) / 3)


# ----------------------------------------------------------------------------
# ABX
# ----------------------------------------------------------------------------


def euclid(a, b):
    return float(np.linalg.norm(a - b))


class TestAbx:
    def test_perfect(self):
        rng = np.random.default_rng(2)
        triples = [(v, v + 5.0, v.copy()) for v in rng.standard_normal((50, 3))]
        assert abx_error(triples, euclid) == 0.0

    def test_all_ties(self):
        triples = [([1], [2], [3])] * 10
        assert abx_error(triples, lambda a, b: 1.0) == 50.0

    def test_random_embeddings(self):
        rng = np.random.default_rng(3)
        triples = [tuple(rng.standard_normal((3, 128))) for _ in range(10_000)]
        assert abs(abx_error(triples, euclid) - 50.0) <= 2.0

    def test_relabel_invariance(self):
        rng = np.random.default_rng(4)
        triples = [tuple(list(rng.integers(0, 4, rng.integers(1, 6))) for _ in range(3)) for _ in range(200)]
        perm = rng.permutation(4)
        relabeled = [tuple([int(perm[u]) for u in s] for s in t) for t in triples]
        assert abx_error(triples, levenshtein) == abx_error(relabeled, levenshtein)

    def test_empty(self):
        with pytest.raises(MetricError):
            abx_error([], euclid)


# ----------------------------------------------------------------------------
# Bitrate
# ----------------------------------------------------------------------------


class TestBitrate:
    def test_single_symbol(self):
        seq = UnitSequence(np.array([5]), np.array([500]))
        assert bitrate([seq], 10.0) == 0.0
        assert effective_categories([seq]) == 1.0

    def test_uniform_256(self):
        frames = np.random.default_rng(5).integers(0, 256, 100_000)
        assert abs(bitrate([frames], len(frames) / 50) - 400.0) <= 1.0

    def test_two_symbols(self):
        frames = np.array([0] * 90_000 + [1] * 10_000)
        h = -(0.9 * np.log2(0.9) + 0.1 * np.log2(0.1))
        assert bitrate([frames], len(frames) / 50) == pytest.approx(50 * h, abs=0.5)
        assert 50 * h == pytest.approx(23.45, abs=0.01)

    def test_merged_and_frame_forms_agree(self):
        seq = UnitSequence(np.array([2, 7, 2]), np.array([3, 1, 4]))
        assert bitrate([seq], 1.0) == bitrate([seq.expand()], 1.0)

    def test_relabel_invariance(self):
        frames = np.random.default_rng(6).integers(0, 6, 1000)
        assert bitrate([frames], 20.0) == pytest.approx(bitrate([(frames + 3) % 6 + 10], 20.0))

    def test_effective_categories_uniform(self):
        assert effective_categories([np.arange(32).repeat(3)]) == pytest.approx(32.0)

    @pytest.mark.parametrize("seqs,dur", [([], 1.0), ([np.array([1, 2])], 0.0)])
    def test_errors(self, seqs, dur):
        with pytest.raises(MetricError):
            bitrate(seqs, dur)


# ----------------------------------------------------------------------------
# Synthetic corpus
# ----------------------------------------------------------------------------


class TestSyntheticCorpus:
    def test_counts_and_files(self, tmp_path):
        corpus = generate_synthetic_corpus(0, 2, 4, 20, tmp_path)
        assert len(list(tmp_path.glob("*.wav"))) == 20
        gold = read_gold(tmp_path / "gold.tsv")
        assert len(gold) == 20 and gold == corpus.gold
        assert set(p for s in gold.values() for p in s) <= set("asiS")

    def test_byte_identical(self, tmp_path):
        generate_synthetic_corpus(5, 2, 3, 6, tmp_path / "a")
        generate_synthetic_corpus(5, 2, 3, 6, tmp_path / "b")
        names = sorted(p.name for p in (tmp_path / "a").iterdir())
        match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", names, shallow=False)
        assert mismatch == [] and errors == [] and len(match) == len(names)

    def test_triples_pair_speakers_and_sentences(self, tmp_path):
        corpus = generate_synthetic_corpus(1, 3, 6, 24, tmp_path)
        assert corpus.triples
        for a, b, x in corpus.triples:
            assert corpus.gold[a] == corpus.gold[x] and corpus.utt2spk[a] != corpus.utt2spk[x]
            assert corpus.gold[b] != corpus.gold[a] and corpus.utt2spk[b] == corpus.utt2spk[a]

    def test_vowel_pitch(self):
        x, _ = synth_vowel(500.0, 1500.0, 140.0, 8000)
        f0 = estimate_f0(x).f0_hz
        assert abs(np.median(f0[f0 > 0]) - 140.0) <= 3.0

    def test_speaker_pitch_in_range(self, tmp_path):
        corpus = generate_synthetic_corpus(2, 4, 6, 4, tmp_path)
        assert all(isinstance(s, Speaker) and 100 <= s.pitch_hz <= 220 for s in corpus.speakers)
