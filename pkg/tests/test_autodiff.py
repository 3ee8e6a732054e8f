import numpy as np
import pytest

from gradcases import OP_CASES
from ttswot import autodiff as ad
from ttswot.autodiff import Tensor, backward, gradient_check
from ttswot.errors import NumericError, ShapeError

GRAD_TOL = 1e-4


# ----------------------------------------------------------------------------
# Finite-difference agreement of every op
# ----------------------------------------------------------------------------


class TestOpGradients:
    @pytest.mark.parametrize("name", sorted(OP_CASES))
    def test_matches_central_difference(self, name):
        fn, inputs = OP_CASES[name]
        assert gradient_check(fn, inputs) < GRAD_TOL

    def test_checker_detects_wrong_gradient(self):
        def bad_square(a):
            return ad._make("bad", a.data**2, (a,), lambda g: (g * a.data,))

        assert gradient_check(bad_square, [np.array([0.7, -1.3, 2.1])]) > 0.1

    def test_scalar_output_needs_no_cotangent(self):
        err = gradient_check(lambda a: ad.tsum(ad.exp(a)), [np.array([0.1, 0.2])])
        assert err < 1e-8

    def test_five_point_stencil_is_more_accurate(self):
        # sin(50 a) has a large third derivative, which the three-point stencil feels at h = 1e-4
        fn = lambda a: ad.tsum(ad.sin(a * 50.0))
        x = [np.array([0.3, 1.1])]
        assert gradient_check(fn, x, h=1e-4, order=4) < 1e-3 * gradient_check(fn, x, h=1e-4)

    def test_unknown_stencil_order(self):
        with pytest.raises(ValueError):
            gradient_check(lambda a: ad.tsum(a), [np.ones(2)], order=3)


# ----------------------------------------------------------------------------
# Tape semantics
# ----------------------------------------------------------------------------


class TestBackward:
    def test_known_values(self):
        x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
        backward(ad.tsum(x * x))
        np.testing.assert_array_equal(x.grad, [2.0, 4.0, 6.0])

    def test_reused_input_accumulates(self):
        x = Tensor(np.array(3.0), requires_grad=True)
        y = x * x + x * 2.0 + ad.exp(x * 0.0)
        backward(y)
        assert float(x.grad) == pytest.approx(8.0)

    def test_diamond_graph(self):
        x = Tensor(np.array(0.5), requires_grad=True)
        a = ad.sin(x)
        y = a * a + a
        backward(y)
        expected = 2 * np.sin(0.5) * np.cos(0.5) + np.cos(0.5)
        assert float(x.grad) == pytest.approx(expected, rel=1e-12)

    def test_grad_accumulates_across_graphs(self):
        x = Tensor(np.array([1.0, -1.0]), requires_grad=True)
        backward(ad.tsum(x * 3.0))
        backward(ad.tsum(x * 2.0))
        np.testing.assert_array_equal(x.grad, [5.0, 5.0])
        x.zero_grad()
        assert x.grad is None

    def test_second_backward_rejected(self):
        x = Tensor(np.array([1.0]), requires_grad=True)
        y = ad.tsum(x * 2.0)
        backward(y)
        with pytest.raises(RuntimeError):
            backward(y)

    def test_non_scalar_needs_cotangent(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ShapeError):
            backward(x * 2.0)
        y = x * 2.0
        backward(y, np.array([1.0, 0.0, -1.0]))
        np.testing.assert_array_equal(x.grad, [2.0, 0.0, -2.0])

    def test_constants_get_no_grad(self):
        x = Tensor(np.ones(2), requires_grad=True)
        c = Tensor(np.ones(2))
        backward(ad.tsum(x * c))
        assert c.grad is None

    def test_no_grad_records_nothing(self):
        x = Tensor(np.ones(2), requires_grad=True)
        with ad.no_grad():
            y = ad.tsum(x * 2.0)
        assert not y.requires_grad
        backward(y)
        assert x.grad is None

    def test_deep_chain_does_not_recurse(self):
        x = Tensor(np.array(1.0), requires_grad=True)
        y = x
        for _ in range(5000):
            y = y * 1.0
        backward(y)
        assert float(x.grad) == 1.0


# ----------------------------------------------------------------------------
# Numeric guards and shape errors
# ----------------------------------------------------------------------------


class TestGuards:
    def test_checked_mode_names_op(self):
        x = Tensor(np.array([-1.0, 1.0]), requires_grad=True)
        with ad.checked():
            with pytest.raises(NumericError, match="log"):
                with np.errstate(invalid="ignore"):
                    ad.log(x)

    def test_unchecked_mode_passes_nan_through(self):
        x = Tensor(np.array([-1.0]))
        with np.errstate(invalid="ignore"):
            assert np.isnan(ad.log(x).data[0])

    def test_matmul_inner_mismatch(self):
        with pytest.raises(ShapeError):
            ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_matmul_rejects_vectors(self):
        with pytest.raises(ShapeError):
            ad.matmul(Tensor(np.ones(3)), Tensor(np.ones((3, 2))))

    def test_dtype_preserved(self):
        x = Tensor(np.ones(4, dtype=np.float32), requires_grad=True)
        y = ad.tsum(ad.tanh(x * 0.5))
        assert y.dtype == np.float32
        backward(y)
        assert x.grad.dtype == np.float32
