import numpy as np
import pytest
import scipy.signal

from ttswot.errors import ConfigError, ConvergenceError
from ttswot.remez import (
    BAND_SPECS,
    NYQUIST,
    SAMPLE_RATE,
    BandSpec,
    alternation_count,
    apply_fir,
    design_pairs,
    freq_response,
    remez_design,
)


@pytest.fixture(scope="module")
def filters():
    return design_pairs()


def band_mask(freqs, band):
    return (freqs >= band[0]) & (freqs <= band[1])


# ----------------------------------------------------------------------------
# Design
# ----------------------------------------------------------------------------


class TestDesign:
    @pytest.mark.parametrize("name", sorted(BAND_SPECS))
    def test_matches_scipy_remez(self, filters, name):
        spec = BAND_SPECS[name]
        edges = [e for band in spec.bands for e in band]
        ref = scipy.signal.remez(11, edges, spec.desired, fs=SAMPLE_RATE, grid_density=64)
        np.testing.assert_allclose(filters[name].taps, ref, atol=1e-4)

    @pytest.mark.parametrize("name", sorted(BAND_SPECS))
    def test_symmetric_taps(self, filters, name):
        taps = filters[name].taps
        assert len(taps) == 11
        np.testing.assert_array_equal(taps, taps[::-1])

    @pytest.mark.parametrize("name", sorted(BAND_SPECS))
    def test_alternation(self, filters, name):
        assert alternation_count(filters[name], BAND_SPECS[name]) >= 7

    @pytest.mark.parametrize("name", sorted(BAND_SPECS))
    def test_bands_respect_ripple(self, filters, name):
        spec, f = BAND_SPECS[name], filters[name]
        freqs = np.linspace(0, NYQUIST, 4096)
        mag = freq_response(f, 4096)
        for band, gain in zip(spec.bands, spec.desired):
            inside = mag[band_mask(freqs, band)]
            # the ripple is levelled on a finite grid; a denser evaluation may peek slightly above it
            assert np.all(np.abs(inside - gain) <= f.ripple * (1 + 1e-3))

    @pytest.mark.parametrize("name", sorted(BAND_SPECS))
    def test_stopband_below_passband(self, filters, name):
        spec, f = BAND_SPECS[name], filters[name]
        freqs = np.linspace(0, NYQUIST, 4096)
        mag = freq_response(f, 4096)
        pass_band = spec.bands[spec.desired.index(1)]
        stop_band = spec.bands[spec.desired.index(0)]
        assert mag[band_mask(freqs, stop_band)].max() < mag[band_mask(freqs, pass_band)].min()

    def test_voiced_lowpass_edges(self, filters):
        f = filters["voiced_lowpass"]
        mag = freq_response(f, 4097)
        assert abs(mag[0] - 1.0) <= f.ripple
        assert mag[round(7500 / NYQUIST * 4096)] <= f.ripple

    def test_equal_transition_widths_give_equal_ripple(self, filters):
        # both pairs have a 2 kHz transition band at the same order
        assert filters["voiceless_lowpass"].ripple == pytest.approx(filters["voiced_lowpass"].ripple, rel=1e-6)

    def test_all_pass_target(self):
        f = remez_design(BandSpec(((0, 8000),), (1,)))
        np.testing.assert_allclose(freq_response(f, 512), 1.0, atol=1e-9)

    def test_wider_transition_lowers_ripple(self):
        narrow = remez_design(BandSpec(((0, 5000), (7000, 8000)), (1, 0)))
        wide = remez_design(BandSpec(((0, 4000), (7000, 8000)), (1, 0)))
        assert wide.ripple < narrow.ripple

    def test_non_convergence(self):
        with pytest.raises(ConvergenceError) as info:
            remez_design(BAND_SPECS["voiced_lowpass"], max_iter=1, tol=1e-15)
        assert info.value.spread > 0

    def test_odd_order_rejected(self):
        with pytest.raises(ConfigError):
            remez_design(BAND_SPECS["voiced_lowpass"], order=9)


# ----------------------------------------------------------------------------
# Response and filtering
# ----------------------------------------------------------------------------


class TestResponse:
    def test_delta_all_ones(self):
        taps = np.zeros(11)
        taps[0] = 1.0
        np.testing.assert_allclose(freq_response(taps, 64), 1.0, atol=1e-15)

    def test_boxcar_dc_gain(self):
        assert freq_response(np.full(11, 1 / 11), 16)[0] == pytest.approx(1.0, abs=1e-15)

    def test_matches_zero_padded_fft(self, filters):
        taps = filters["voiceless_highpass"].taps
        oracle = np.abs(np.fft.rfft(taps, 8190))
        np.testing.assert_allclose(freq_response(taps, 4096), oracle, atol=1e-10)


class TestApply:
    def test_delta_identity(self):
        taps = np.zeros(11)
        taps[0] = 1.0
        x = np.random.default_rng(0).standard_normal(50)
        np.testing.assert_array_equal(apply_fir(taps, x), x)

    def test_dc_steady_state(self, filters):
        f = filters["voiced_lowpass"]
        y = apply_fir(f, np.full(100, 0.7))
        np.testing.assert_allclose(y[20:], 0.7 * f.taps.sum(), atol=1e-12)

    def test_linearity(self, filters):
        rng = np.random.default_rng(1)
        x, y = rng.standard_normal(200), rng.standard_normal(200)
        f = filters["voiceless_lowpass"]
        np.testing.assert_allclose(apply_fir(f, 2 * x - 3 * y), 2 * apply_fir(f, x) - 3 * apply_fir(f, y),
                                   atol=1e-12)
