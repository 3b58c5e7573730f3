"""Differentiation engine: forward values, backward gradients, contract errors."""

import numpy as np
import pytest

from gic import autodiff as ad
from fd import central_difference, assert_grad_close


def grad_of(f, x0):
    """Analytic gradient of scalar ``f`` (built from ad primitives) at ``x0``."""
    x = ad.Value(np.asarray(x0, dtype=np.float64), requires_grad=True)
    with ad.Tape():
        loss = f(x)
    ad.backward(loss)
    return x.grad


class TestForward:
    def test_values_match_numpy(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(4, 5))
        b = rng.normal(size=(5, 3))
        out = ad.matmul(ad.Value(a), ad.Value(b))
        np.testing.assert_allclose(out.data, a @ b)

    def test_no_tape_means_no_grad(self):
        x = ad.Value([1.0, 2.0], requires_grad=True)
        y = ad.exp(x)
        assert not y.requires_grad
        assert y._node is None

    def test_relu_and_cross_entropy_values(self):
        np.testing.assert_array_equal(
            ad.relu(ad.Value([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0]
        )
        loss = ad.softmax_cross_entropy(ad.Value([0.0, 0.0]), 0)
        assert loss.data == pytest.approx(np.log(2.0))

    def test_logsumexp_is_shift_stable(self):
        x = ad.Value([1000.0, 1000.0])
        assert ad.logsumexp(x, axis=0).data == pytest.approx(1000.0 + np.log(2.0))


class TestBackward:
    def test_sum_of_squares(self):
        g = grad_of(lambda x: ad.sum_reduce(ad.square(x)), [1.0, 2.0])
        np.testing.assert_allclose(g, [2.0, 4.0])

    def test_logsumexp_grad_is_softmax(self):
        x0 = np.array([1.0, 2.0])
        g = grad_of(lambda x: ad.logsumexp(x, axis=0), x0)
        e = np.exp(x0 - x0.max())
        np.testing.assert_allclose(g, e / e.sum(), rtol=1e-6)

    def test_grad_accumulates_across_uses(self):
        # y = x*x via two consumers of the same value
        x = ad.Value(3.0, requires_grad=True)
        with ad.Tape():
            loss = ad.mul(x, x)
        ad.backward(loss)
        assert x.grad == pytest.approx(6.0)

    def test_relu_dead_at_zero(self):
        g = grad_of(lambda x: ad.sum_reduce(ad.relu(x)), [-1.0, 0.0, 2.0])
        np.testing.assert_array_equal(g, [0.0, 0.0, 1.0])

    def test_max_picks_first_tie(self):
        x = ad.Value(np.array([[2.0, 2.0, 1.0]]), requires_grad=True)
        with ad.Tape():
            m, idx = ad.max_reduce_with_index(x, axis=1)
            loss = ad.sum_reduce(m)
        ad.backward(loss)
        assert idx[0] == 0
        np.testing.assert_array_equal(x.grad, [[1.0, 0.0, 0.0]])

    @pytest.mark.parametrize("seed", range(5))
    def test_composite_against_central_differences(self, seed):
        rng = np.random.default_rng(seed)
        x0 = rng.normal(size=(3, 4)) + 0.1
        w = rng.normal(size=(4, 2))

        def f(x):
            h = ad.relu(ad.matmul(x, ad.Value(w)))
            z = ad.logsumexp(ad.reshape(h, (6,)), axis=0)
            return ad.mul(z, z)

        analytic = grad_of(f, x0)
        numeric = central_difference(
            lambda a: float(f(ad.Value(a)).data), x0
        )
        assert_grad_close(analytic, numeric)

    @pytest.mark.parametrize(
        "op",
        [
            lambda x: ad.sum_reduce(ad.exp(x)),
            lambda x: ad.sum_reduce(ad.log(ad.add(ad.square(x), 1.5))),
            lambda x: ad.sum_reduce(ad.sqrt(ad.add(ad.square(x), 0.5))),
            lambda x: ad.sum_reduce(ad.div(x, ad.add(ad.square(x), 2.0))),
            lambda x: ad.sum_reduce(ad.negate(ad.mul(x, 0.7))),
            lambda x: ad.logsumexp(x, axis=0),
            lambda x: ad.softmax_cross_entropy(x, 1),
        ],
    )
    def test_unary_chains_against_central_differences(self, op):
        rng = np.random.default_rng(11)
        x0 = rng.normal(size=5)
        analytic = grad_of(op, x0)
        numeric = central_difference(lambda a: float(op(ad.Value(a)).data), x0)
        assert_grad_close(analytic, numeric)

    def test_structural_ops_route_gradients(self):
        rng = np.random.default_rng(7)
        x0 = rng.normal(size=(4, 3))

        def f(x):
            top = ad.take(x, [0, 0, 2], axis=0)        # duplicates must accumulate
            flip = ad.transpose(top, (1, 0))
            both = ad.concat([ad.reshape(flip, (9,)), ad.reshape(x[1:3, :], (6,))])
            return ad.sum_reduce(ad.square(both))

        analytic = grad_of(f, x0)
        numeric = central_difference(lambda a: float(f(ad.Value(a)).data), x0)
        assert_grad_close(analytic, numeric)

    def test_broadcasting_add_mul(self):
        rng = np.random.default_rng(19)
        x0 = rng.normal(size=(3, 1))
        other = rng.normal(size=(3, 4))

        def f(x):
            y = ad.mul(ad.add(x, ad.Value(other)), x)
            return ad.sum_reduce(y)

        analytic = grad_of(f, x0)
        numeric = central_difference(lambda a: float(f(ad.Value(a)).data), x0)
        assert_grad_close(analytic, numeric)

    def test_matmul_both_sides(self):
        rng = np.random.default_rng(23)
        a0 = rng.normal(size=(2, 3))
        b0 = rng.normal(size=(3, 2))
        a = ad.Value(a0, requires_grad=True)
        b = ad.Value(b0, requires_grad=True)
        with ad.Tape():
            loss = ad.sum_reduce(ad.square(ad.matmul(a, b)))
        ad.backward(loss)
        assert_grad_close(
            a.grad,
            central_difference(lambda m: float((((m @ b0) ** 2).sum())), a0),
        )
        assert_grad_close(
            b.grad,
            central_difference(lambda m: float((((a0 @ m) ** 2).sum())), b0),
        )

    def test_custom_op_hook(self):
        x = ad.Value([1.0, 2.0], requires_grad=True)
        with ad.Tape():
            y = ad.custom((x,), x.data**3, lambda g: (g * 3.0 * x.data**2,))
            loss = ad.sum_reduce(y)
        ad.backward(loss)
        np.testing.assert_allclose(x.grad, [3.0, 12.0])


class TestContract:
    def test_nonscalar_loss_rejected(self):
        x = ad.Value([1.0, 2.0], requires_grad=True)
        with ad.Tape():
            y = ad.square(x)
        with pytest.raises(ad.GradientError):
            ad.backward(y)

    def test_tape_single_use(self):
        x = ad.Value(2.0, requires_grad=True)
        with ad.Tape():
            loss = ad.square(x)
        ad.backward(loss)
        with pytest.raises(ad.GradientError):
            ad.backward(loss)

    def test_backward_outside_record_rejected(self):
        x = ad.Value(2.0, requires_grad=True)
        y = ad.square(x)  # no tape active
        with pytest.raises(ad.GradientError):
            ad.backward(y)

    def test_nested_tapes_rejected(self):
        with ad.Tape():
            with pytest.raises(ad.GradientError):
                with ad.Tape():
                    pass

    def test_shape_errors(self):
        with pytest.raises(ad.ShapeError):
            ad.matmul(ad.Value(np.ones((2, 3))), ad.Value(np.ones((2, 3))))
        with pytest.raises(ad.ShapeError):
            ad.softmax_cross_entropy(ad.Value(np.ones((2, 2))), 0)
        with pytest.raises(ad.ShapeError):
            ad.softmax_cross_entropy(ad.Value(np.ones(2)), 5)
