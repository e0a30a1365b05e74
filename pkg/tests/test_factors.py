"""Correlated and independent binary feature priors."""

import numpy as np
import pytest
from scipy import stats

from latentmix.distributions import RngStream
from latentmix.factors import CorrelatedFeaturePrior, IndependentFeaturePrior

from oracles import spike_slab_inclusion_prob


def seeded_prior(seed=0, d=5, kf=2, k=6):
    prior = CorrelatedFeaturePrior(d, kf, k)
    gen = RngStream(seed).gen
    prior.draw_from_prior(gen)
    return prior, gen


class TestImpliedCovariance:
    def test_zero_loadings_identity(self):
        prior = CorrelatedFeaturePrior(4, 2, 3)
        np.testing.assert_array_equal(prior.implied_covariance(), np.eye(4))
        np.testing.assert_array_equal(prior.implied_correlation(), np.eye(4))

    def test_single_column(self):
        prior = CorrelatedFeaturePrior(2, 1, 3)
        prior.loadings = np.array([[1.0], [1.0]])
        np.testing.assert_allclose(prior.implied_covariance(), [[2.0, 1.0], [1.0, 2.0]])
        np.testing.assert_allclose(prior.implied_correlation()[0, 1], 0.5)

    def test_matches_naive_product(self):
        prior, _ = seeded_prior(1, d=6, kf=3)
        b = prior.loadings
        naive = np.array(
            [[sum(b[i, t] * b[j, t] for t in range(3)) + (i == j) for j in range(6)] for i in range(6)]
        )
        np.testing.assert_allclose(prior.implied_covariance(), naive, atol=1e-12)

    def test_correlation_symmetric_unit_diag(self):
        prior, _ = seeded_prior(2)
        corr = prior.implied_correlation()
        np.testing.assert_array_equal(corr, corr.T)
        np.testing.assert_array_equal(np.diag(corr), np.ones(5))
        assert np.min(np.linalg.eigvalsh(prior.implied_covariance())) >= 1 - 1e-9


class TestActivationProb:
    def test_zero_projection_half(self):
        prior = CorrelatedFeaturePrior(3, 2, 4)
        assert prior.marginal_activation_prob(0, 0) == 0.5
        np.testing.assert_allclose(prior.activation_prob(), np.full((3, 4), 0.5))

    def test_cdf_table_value(self):
        prior = CorrelatedFeaturePrior(2, 1, 1)
        prior.loadings[0, 0] = 1.0
        prior.factors[0, 0] = 1.959964
        assert abs(prior.marginal_activation_prob(0, 0) - 0.975) < 1e-4


class TestEtaUpdate:
    def test_signs_respected(self):
        prior, gen = seeded_prior(3)
        bits = (RngStream(4).gen.uniform(size=(5, 6)) < 0.5).astype(np.uint8)
        prior.gibbs_update_eta(bits, gen)
        assert np.all((prior.eta > 0) == bits.astype(bool))

    def test_half_normal_mean_when_unloaded(self):
        prior = CorrelatedFeaturePrior(1, 1, 10**5)
        prior.loadings[:] = 0.0
        bits = np.ones((1, 10**5), dtype=np.uint8)
        prior.gibbs_update_eta(bits, RngStream(5).gen)
        assert abs(prior.eta.mean() - np.sqrt(2 / np.pi)) < 3 * np.sqrt(1 - 2 / np.pi) / np.sqrt(10**5)

    def test_deterministic_under_fixed_stream(self):
        prior1, _ = seeded_prior(6)
        prior2, _ = seeded_prior(6)
        bits = np.zeros((5, 6), dtype=np.uint8)
        prior1.gibbs_update_eta(bits, RngStream(7).gen)
        prior2.gibbs_update_eta(bits, RngStream(7).gen)
        np.testing.assert_array_equal(prior1.eta, prior2.eta)


class TestFactorUpdate:
    def test_zero_loadings_prior_draw(self):
        prior = CorrelatedFeaturePrior(4, 2, 2000)
        prior.loadings[:] = 0.0
        prior.eta = RngStream(8).gen.standard_normal((4, 2000))
        prior.gibbs_update_factors(RngStream(9).gen)
        assert abs(prior.factors.mean()) < 3 / np.sqrt(2 * 2000)
        assert abs(prior.factors.var() - 1.0) < 0.07

    def test_scalar_conjugacy(self):
        # one entity, one factor: posterior mean B*eta/(1+B^2)
        prior = CorrelatedFeaturePrior(1, 1, 4000)
        b = 1.7
        prior.loadings[0, 0] = b
        prior.eta = RngStream(10).gen.standard_normal((1, 4000)) + 0.9
        prior.gibbs_update_factors(RngStream(11).gen)
        expected = b * prior.eta[0] / (1 + b * b)
        resid = prior.factors[0] - expected
        sd = np.sqrt(1 / (1 + b * b))
        assert abs(resid.mean()) < 4 * sd / np.sqrt(4000)
        assert abs(resid.std() - sd) < 0.05

    def test_posterior_covariance_shrinks_with_entities(self):
        traces = []
        for d in (2, 4, 8):
            b = np.full((d, 1), 0.8)
            prec = np.eye(1) + b.T @ b
            traces.append(float(np.trace(np.linalg.inv(prec))))
        assert traces[0] > traces[1] > traces[2]


class TestLoadingsUpdate:
    def test_flat_likelihood_keeps_prior_odds(self):
        prior, _ = seeded_prior(12)
        prior.factors[:] = 0.0
        rows, logodds, _, _ = prior.loading_inclusion_logodds(0)
        from scipy.special import logit

        np.testing.assert_allclose(logodds, logit(prior.include_prob[0]), atol=1e-12)

    def test_scalar_inclusion_matches_quadrature(self):
        prior = CorrelatedFeaturePrior(2, 1, 6)
        gen = RngStream(13).gen
        prior.factors = gen.standard_normal((1, 6))
        prior.loadings[0, 0] = 1.2  # diagonal entity
        prior.loadings[1, 0] = 0.0
        prior.eta = gen.standard_normal((2, 6)) + 0.4
        prior.slab_var = np.array([0.7, 1.3])
        prior.include_prob = np.array([0.35])
        rows, logodds, _, _ = prior.loading_inclusion_logodds(0)
        assert list(rows) == [1]
        resid = prior.eta[1]
        oracle = spike_slab_inclusion_prob(resid, prior.factors[0], 1.3, 0.35)
        mine = 1 / (1 + np.exp(-logodds[0]))
        assert abs(mine - oracle) < 1e-8

    def test_structural_invariants_after_updates(self):
        prior, gen = seeded_prior(14, d=6, kf=3)
        bits = (gen.uniform(size=(6, 6)) < 0.5).astype(np.uint8)
        for _ in range(20):
            prior.sweep(bits, gen)
        prior.validate()
        cols, rows = np.meshgrid(np.arange(3), np.arange(6))
        assert np.all(prior.loadings[cols > rows] == 0.0)
        assert np.all(np.diag(prior.loadings)[:3] > 0)

    def test_diagonal_positive_after_update(self):
        prior, gen = seeded_prior(15)
        for _ in range(10):
            prior.gibbs_update_loadings(gen)
            assert prior.loadings[0, 0] > 0 and prior.loadings[1, 1] > 0


class TestPriorSimulation:
    def test_tetrachoric_consistency(self):
        # empirical feature correlation across features matches the
        # arcsine law applied to the implied latent correlation
        d, kf, k = 4, 2, 60000
        prior = CorrelatedFeaturePrior(d, kf, k)
        gen = RngStream(16).gen
        prior.loadings = np.array(
            [[0.9, 0.0], [0.6, 0.7], [-0.4, 0.5], [0.0, -0.8]]
        )
        prior.factors = gen.standard_normal((kf, k))
        prior.eta = prior.loadings @ prior.factors + gen.standard_normal((d, k))
        bits = (prior.eta > 0).astype(float)
        corr_latent = prior.implied_correlation()
        emp = np.corrcoef(bits)
        expected = (2 / np.pi) * np.arcsin(corr_latent)
        np.testing.assert_allclose(emp, expected, atol=0.02)


class TestIndependentPrior:
    def test_entity_exchangeability(self):
        prior = IndependentFeaturePrior(6, 4, alpha=1.0)
        gen = RngStream(17).gen
        prior.feat_prob = gen.uniform(0.2, 0.8, size=4)
        bits = (gen.uniform(size=(6, 4)) < 0.5).astype(np.uint8)
        base = prior.log_prior(bits)
        perm = gen.permutation(6)
        assert np.isclose(prior.log_prior(bits[perm]), base, atol=1e-12)

    def test_update_is_conjugate_beta(self):
        prior = IndependentFeaturePrior(50, 3, alpha=1.0)
        bits = np.zeros((50, 3), dtype=np.uint8)
        bits[:30, 0] = 1
        draws = []
        for s in range(4000):
            prior.sweep(bits, RngStream(1000 + s).gen)
            draws.append(prior.feat_prob[0])
        a, b = 1.0 / 3 + 30, 1.0 + 20
        assert abs(np.mean(draws) - a / (a + b)) < 0.01

    def test_identity_correlation(self):
        prior = IndependentFeaturePrior(5, 3)
        np.testing.assert_array_equal(prior.implied_correlation(), np.eye(5))
