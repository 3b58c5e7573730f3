"""Mixture-gradient encoding layer: densities, responsibilities, features."""

import numpy as np
import pytest
from scipy.stats import norm

from gic import autodiff as ad
from gic import kernels
from gic.conv import (
    EiGmmConvLayer,
    conv_apply,
    conv_forward,
    encode_fields,
    encode_subgraph,
    responsibilities,
    weighted_log_gaussian,
)
from gic.graphs import AttributeGraph, ReceptiveField, field_matrix
from gic.synthetic import random_graph


def make_field(xs, weights, reference=0):
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    members = np.arange(len(xs))
    return ReceptiveField(reference, members, np.asarray(weights, float), xs)


def single_component_layer(d, mu0, seed=0):
    layer = EiGmmConvLayer(d, 1, num_scales=1, num_components=1, seed=seed)
    layer.mu[0].data[:] = mu0
    layer.log_sigma[0].data[:] = 0.0
    layer.alpha[0].data[:] = 0.0
    return layer


def direct_log_likelihood(xs, weights, pi, mu, sigma):
    """Independent oracle: subgraph log-likelihood via scipy normal logpdf."""
    total = 0.0
    for x, a in zip(xs, weights):
        comps = []
        for c in range(len(pi)):
            logn = norm.logpdf(x, loc=mu[c], scale=sigma[c] / np.sqrt(a)).sum()
            comps.append(np.log(pi[c]) + logn)
        total += np.logaddexp.reduce(comps)
    return total


class TestWeightedLogGaussian:
    def test_at_mean_unit(self):
        assert weighted_log_gaussian([0.0], [0.0], [1.0], 1.0) == pytest.approx(
            -0.5 * np.log(2 * np.pi)
        )

    def test_weight_sharpens(self):
        got = weighted_log_gaussian([0.0], [0.0], [1.0], 4.0)
        assert got == pytest.approx(np.log(2) - 0.5 * np.log(2 * np.pi))

    def test_matches_scipy(self):
        got = weighted_log_gaussian([1.0], [0.0], [2.0], 3.0)
        want = norm.logpdf(1.0, loc=0.0, scale=2.0 / np.sqrt(3.0))
        assert got == pytest.approx(want, abs=1e-12)

    def test_multidim_sums(self):
        x, mu, sigma = [1.0, -0.5], [0.2, 0.1], [1.5, 0.7]
        got = weighted_log_gaussian(x, mu, sigma, 2.0)
        want = sum(
            norm.logpdf(xi, mi, si / np.sqrt(2.0))
            for xi, mi, si in zip(x, mu, sigma)
        )
        assert got == pytest.approx(want, abs=1e-12)

    def test_nonpositive_weight_rejected(self):
        with pytest.raises(ValueError):
            weighted_log_gaussian([0.0], [0.0], [1.0], 0.0)


class TestResponsibilities:
    def test_identical_components_split_evenly(self):
        layer = EiGmmConvLayer(2, 1, 1, 2, seed=0)
        layer.mu[0].data[:] = 0.0
        rf = make_field([[0.3, -0.2], [1.0, 0.5]], [0.6, 0.4])
        Q = responsibilities(rf, layer, 0)
        np.testing.assert_allclose(Q, 0.5)

    def test_single_component(self):
        layer = single_component_layer(2, 0.0)
        rf = make_field([[0.3, -0.2], [1.0, 0.5]], [0.6, 0.4])
        np.testing.assert_allclose(responsibilities(rf, layer, 0), 1.0)

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_naive_ratio(self, seed):
        rng = np.random.default_rng(seed)
        layer = EiGmmConvLayer(3, 1, 1, 3, seed=seed)
        layer.alpha[0].data[:] = rng.normal(size=3)
        rf = make_field(rng.normal(size=(4, 3)), rng.uniform(0.2, 1.0, size=4))
        Q = responsibilities(rf, layer, 0)
        np.testing.assert_allclose(Q.sum(axis=1), 1.0, atol=1e-10)

        a = layer.alpha[0].data
        pi = np.exp(a) / np.exp(a).sum()
        mu = layer.mu[0].data
        sigma = np.exp(layer.log_sigma[0].data)
        for j in range(4):
            dens = np.array([
                pi[c] * np.exp(
                    norm.logpdf(
                        rf.member_attributes[j], mu[c],
                        sigma[c] / np.sqrt(rf.weights[j]),
                    ).sum()
                )
                for c in range(3)
            ])
            np.testing.assert_allclose(Q[j], dens / dens.sum(), rtol=1e-9)


class TestEncodeSubgraph:
    def test_two_member_closed_form(self):
        layer = single_component_layer(1, 0.0)
        rf = make_field([[1.0], [3.0]], [1.0, 1.0])
        np.testing.assert_allclose(encode_subgraph(rf, layer, 0), [4.0, 8.0])

    def test_members_at_mean(self):
        layer = single_component_layer(1, 0.0)
        n = 5
        rf = make_field(np.zeros((n, 1)), np.ones(n))
        np.testing.assert_allclose(encode_subgraph(rf, layer, 0), [0.0, -n])

    @pytest.mark.parametrize("seed", range(3))
    def test_equals_gradient_of_direct_likelihood(self, seed):
        # the feature IS dzeta/dmu, dzeta/dsigma of the scipy-evaluated
        # log-likelihood; finite differences close the loop
        rng = np.random.default_rng(40 + seed)
        C, d, n = 2, 3, 4
        layer = EiGmmConvLayer(d, 1, 1, C, seed=seed)
        layer.alpha[0].data[:] = rng.normal(scale=0.5, size=C)
        xs = rng.normal(size=(n, d))
        weights = rng.uniform(0.3, 1.2, size=n)
        rf = make_field(xs, weights)
        feat = encode_subgraph(rf, layer, 0).reshape(C, 2, d)

        a = layer.alpha[0].data
        pi = np.exp(a) / np.exp(a).sum()
        mu0 = layer.mu[0].data.copy()
        sig0 = np.exp(layer.log_sigma[0].data)

        h = 1e-6
        for c in range(C):
            for dim in range(d):
                for block, base in ((0, mu0), (1, sig0)):
                    bumped_mu, bumped_sig = mu0.copy(), sig0.copy()
                    target = bumped_mu if block == 0 else bumped_sig
                    target[c, dim] += h
                    up = direct_log_likelihood(xs, weights, pi, bumped_mu, bumped_sig)
                    target[c, dim] -= 2 * h
                    dn = direct_log_likelihood(xs, weights, pi, bumped_mu, bumped_sig)
                    fd = (up - dn) / (2 * h)
                    assert feat[c, block, dim] == pytest.approx(fd, rel=1e-6, abs=1e-8)


class TestConvForward:
    def test_zero_filter_zero_output(self):
        rng = np.random.default_rng(1)
        g = random_graph(6, 3, rng)
        layer = EiGmmConvLayer(3, 4, 2, 2, seed=1)
        layer.filter.data[:] = 0.0
        layer.bias.data[:] = 0.0
        np.testing.assert_array_equal(conv_forward(g, layer), np.zeros((6, 4)))

    def test_reported_shape_arithmetic(self):
        layer = EiGmmConvLayer(39, 64, 7, 7, seed=0)
        assert layer.per_scale_feature_len == 546
        assert layer.concat_feature_len == 3822
        assert layer.filter_param_count == 244608
        assert layer.filter.data.shape == (3822, 64)

    def test_output_shape_and_nonnegativity(self):
        rng = np.random.default_rng(2)
        g = random_graph(5, 3, rng)
        layer = EiGmmConvLayer(3, 8, 2, 3, seed=2)
        out = conv_forward(g, layer)
        assert out.shape == (5, 8)
        assert (out >= 0).all()

    def test_blockwise_filters_equal_concatenated_map(self):
        # integer-valued blocks make float addition exact, so the two
        # aggregation routes must agree bit for bit
        rng = np.random.default_rng(3)
        m, blocks, width, out = 4, 6, 5, 3
        F = rng.integers(-4, 5, size=(m, blocks * width)).astype(float)
        Wt = rng.integers(-3, 4, size=(blocks * width, out)).astype(float)
        whole = F @ Wt
        summed = np.zeros((m, out))
        for b in range(blocks):
            sl = slice(b * width, (b + 1) * width)
            summed += F[:, sl] @ Wt[sl, :]
        assert (whole == summed).all()

    @pytest.mark.parametrize("seed", range(3))
    def test_permutation_equivariance(self, seed):
        rng = np.random.default_rng(60 + seed)
        g = random_graph(7, 3, rng, weighted=True)
        layer = EiGmmConvLayer(3, 6, 2, 2, seed=seed)
        perm = rng.permutation(7)
        out_g = conv_forward(g, layer)
        out_h = conv_forward(g.permuted(perm), layer)
        np.testing.assert_allclose(out_h, out_g[perm], atol=1e-10)


class TestEncodeGradients:
    def test_grad_flows_through_alpha_but_not_into_feature(self):
        # alpha is absent from the feature blocks yet still receives gradient
        # through the responsibilities
        rng = np.random.default_rng(9)
        layer = EiGmmConvLayer(2, 1, 1, 3, seed=9)
        layer.alpha[0].data[:] = rng.normal(size=3)
        W = np.array([[0.5, 0.5, 0.0], [0.0, 0.4, 0.6]])
        X = ad.Value(rng.normal(size=(3, 2)), requires_grad=True)
        with ad.Tape():
            F = encode_fields(W, X, layer, 0)
            loss = ad.sum_reduce(ad.square(F))
        ad.backward(loss)
        assert np.abs(layer.alpha[0].grad).sum() > 0
        assert np.abs(X.grad).sum() > 0
        assert F.data.shape == (2, 2 * 2 * 3)

    def test_masked_members_contribute_nothing(self):
        # a zero-weight column must not leak into any vertex's feature
        layer = EiGmmConvLayer(2, 1, 1, 2, seed=4)
        rng = np.random.default_rng(4)
        X = rng.normal(size=(3, 2))
        W_with = np.array([[0.7, 0.3, 0.0]])
        F1, _ = kernels.encode_forward(
            W_with, X, layer.alpha[0].data, layer.mu[0].data, layer.log_sigma[0].data
        )
        X2 = X.copy()
        X2[2] = 999.0  # perturb the excluded member
        F2, _ = kernels.encode_forward(
            W_with, X2, layer.alpha[0].data, layer.mu[0].data, layer.log_sigma[0].data
        )
        np.testing.assert_array_equal(F1, F2)


class TestDiscrimination:
    def test_equal_weighted_sums_still_distinguished(self):
        # both fields have sum(a_j x_j) = 0, so mean-style aggregation
        # collapses them; the mixture encoding keeps them apart
        rng = np.random.default_rng(11)
        fa = make_field([[1.0, 0.0], [-1.0, 0.0]], [0.5, 0.5])
        fb = make_field([[2.0, 0.0], [-2.0, 0.0]], [0.5, 0.5])
        sum_a = (fa.weights[:, None] * fa.member_attributes).sum(0)
        sum_b = (fb.weights[:, None] * fb.member_attributes).sum(0)
        np.testing.assert_array_equal(sum_a, sum_b)

        layer = EiGmmConvLayer(2, 1, 1, 2, seed=11)
        layer.alpha[0].data[:] = rng.normal(scale=0.3, size=2)
        ea = encode_subgraph(fa, layer, 0)
        eb = encode_subgraph(fb, layer, 0)
        assert np.linalg.norm(ea - eb) > 1e-3
