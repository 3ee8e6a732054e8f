import numpy as np
import pytest
import scipy.sparse.linalg

from ttswot.dsp import FeatureSequence
from ttswot.reservoir import Reservoir, init_reservoir, power_iteration_radius, run_reservoir


@pytest.fixture(scope="module")
def reservoir():
    return init_reservoir(42)


# ----------------------------------------------------------------------------
# Construction
# ----------------------------------------------------------------------------


class TestInit:
    def test_same_seed_bit_identical(self, reservoir):
        other = init_reservoir(42)
        assert other.fingerprint() == reservoir.fingerprint()

    def test_different_seed_differs(self, reservoir):
        assert init_reservoir(43).fingerprint() != reservoir.fingerprint()

    @pytest.mark.parametrize("seed", [0, 42])
    def test_nonzero_count(self, seed):
        r = reservoir_for(seed)
        assert 398459 <= r.nnz <= 440402

    def test_radius_estimate(self, reservoir):
        assert 0.891 <= reservoir.estimated_radius() <= 0.909

    def test_true_radius_below_one(self, reservoir):
        eig = scipy.sparse.linalg.eigs(reservoir.w_rec, k=1, which="LM", return_eigenvectors=False)
        assert abs(eig[0]) < 1.0

    def test_input_weights_range(self, reservoir):
        assert reservoir.w_in.shape == (2048, 39)
        assert np.all(np.abs(reservoir.w_in) <= 0.1)

    def test_weights_read_only(self, reservoir):
        with pytest.raises(ValueError):
            reservoir.w_in[0, 0] = 1.0
        with pytest.raises(ValueError):
            reservoir.w_rec.data[0] = 1.0

    def test_power_iteration_on_known_matrix(self):
        w = np.diag([0.5, -0.8, 0.3])
        assert power_iteration_radius(w) == pytest.approx(0.8, rel=1e-6)

    def test_power_iteration_on_rotation_pair(self):
        theta = 0.7
        rot = 0.6 * np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        assert power_iteration_radius(rot) == pytest.approx(0.6, rel=1e-9)


_CACHE = {}


def reservoir_for(seed):
    if seed not in _CACHE:
        _CACHE[seed] = Reservoir(seed)
    return _CACHE[seed]


# ----------------------------------------------------------------------------
# Running
# ----------------------------------------------------------------------------


class TestRun:
    def test_98_frames_give_49(self, reservoir):
        feats = np.random.default_rng(0).standard_normal((98, 39))
        states = run_reservoir(reservoir, FeatureSequence(feats)).states
        assert states.shape == (49, 2048)

    def test_keeps_odd_frames(self):
        r = Reservoir(1, n_units=64)
        feats = np.random.default_rng(1).standard_normal((9, 39))
        full = r.states(feats)
        np.testing.assert_array_equal(run_reservoir(r, feats).states, full[1::2])

    def test_recursion_matches_dense_reference(self):
        r = Reservoir(2, n_units=50)
        feats = np.random.default_rng(2).standard_normal((6, 39))
        w = r.dense_w_rec()
        s = np.zeros(50)
        expected = []
        for u in feats:
            s = np.tanh(r.w_in @ u + w @ s)
            expected.append(s)
        np.testing.assert_allclose(r.states(feats), np.array(expected), atol=1e-14)

    def test_zero_input_zero_state(self, reservoir):
        states = run_reservoir(reservoir, np.zeros((20, 39))).states
        assert np.all(states == 0.0)

    def test_empty_input(self, reservoir):
        assert run_reservoir(reservoir, np.zeros((0, 39))).states.shape == (0, 2048)

    def test_states_inside_tanh_range(self, reservoir):
        feats = 10 * np.random.default_rng(3).standard_normal((30, 39))
        states = run_reservoir(reservoir, feats).states
        assert np.all(np.abs(states) < 1.0)

    def test_batched_matches_single(self):
        r = Reservoir(4, n_units=128)
        feats = np.random.default_rng(4).standard_normal((3, 12, 39))
        batched = r.states(feats)
        for b in range(3):
            np.testing.assert_allclose(batched[b], r.states(feats[b]), atol=1e-14)

    def test_rejects_wrong_frame_rate(self, reservoir):
        with pytest.raises(ValueError):
            run_reservoir(reservoir, FeatureSequence(np.zeros((4, 39)), frame_rate=50))


class TestEchoState:
    def test_initial_state_forgotten(self, reservoir):
        rng = np.random.default_rng(5)
        feats = rng.standard_normal((200, 39))
        a = reservoir.states(feats, s0=rng.uniform(-1, 1, 2048))
        b = reservoir.states(feats, s0=rng.uniform(-1, 1, 2048))
        dist = np.linalg.norm(a - b, axis=1)
        assert dist[-1] < 1e-6
        # fading memory: the distance shrinks over any 20-frame window
        assert np.all(dist[20:] <= dist[:-20] + 1e-12)
