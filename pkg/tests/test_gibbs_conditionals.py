"""Every Gibbs conditional against an independent enumeration/quadrature
oracle on tiny instances."""

import numpy as np
import pytest
from scipy import stats

from latentmix.data import RelationalDataset
from latentmix.distributions import RngStream, sample_wishart
from latentmix.gibbs import GibbsSampler, log_jacobian_cov_to_corr_diag
from latentmix.state import HyperParams, ModelState, decode_matrix, restrict_cov

from oracles import (
    bit_conditional_prob,
    cat_loglik,
    conditional_density_1d,
    grid_mean_var,
    numerical_jacobian_cov_to_corr,
    rank_conditional_prob,
    real_loglik,
)


def build_instance(seed=1, n=3, q=(2, 3), m_real=2, k=2, missing=0.2, mode="correlated"):
    """Random small state + dataset with residual caches refreshed."""
    gen = RngStream(seed).gen
    hyper = HyperParams(
        n_features=k,
        n_factors_rows=2,
        n_factors_cat=2,
        n_factors_real=2,
        prior_mode=mode,
        wishart_df=6.0,
    )
    ds = RelationalDataset(
        cat=gen.integers(0, np.array(q)[None, :], size=(n, len(q))) if len(q) else np.zeros((n, 0), int),
        q=np.array(q, dtype=np.int64),
        real=gen.standard_normal((n, m_real)),
        cat_missing=gen.uniform(size=(n, len(q))) < missing,
        real_missing=gen.uniform(size=(n, m_real)) < missing,
    )
    state = ModelState(n, list(q), m_real, hyper)
    state.init_overdispersed(ds, RngStream(seed + 1))
    for j, cov in enumerate(state.noise_cov):
        if cov.extended is not None:
            draw = sample_wishart(6.0, np.eye(cov.dim) / 6.0, gen) + 0.3 * np.eye(cov.dim)
            cov.set_extended(draw)
    sampler = GibbsSampler(state, ds)
    sampler.refresh_cat_residual()
    sampler.refresh_real_residual()
    return sampler, state, ds


class TestNoiseVariancePosterior:
    def test_zero_residuals(self):
        sampler, state, ds = build_instance(seed=2, n=5, q=(), m_real=2, missing=0.0)
        ds.real[:] = state.real_mean()
        sampler.refresh_real_residual()
        shape, rate = sampler.noise_variance_posterior()
        assert shape == state.hyper.noise_shape + 5.0
        assert np.isclose(rate, state.hyper.noise_rate, atol=1e-12)

    def test_posterior_parameters_match_residuals(self):
        sampler, state, ds = build_instance(seed=3)
        shape, rate = sampler.noise_variance_posterior()
        obs = ~ds.real_missing
        resid = np.array(
            [
                ds.real[i, j] - state.predict_real_mean(i, j)
                for i in range(ds.n_rows)
                for j in range(ds.m_real)
                if obs[i, j]
            ]
        )
        assert np.isclose(shape, state.hyper.noise_shape + 0.5 * len(resid), atol=1e-12)
        assert np.isclose(rate, state.hyper.noise_rate + 0.5 * np.sum(resid**2), atol=1e-10)

    def test_draw_mean_matches_inverse_gamma(self):
        # residuals zero, 10 observations: posterior IG(a0+5, b0); the draws'
        # mean matches b0/(a0+4) within 4 MC standard errors
        sampler, state, ds = build_instance(seed=4, n=10, q=(), m_real=1, missing=0.0)
        ds.real[:] = state.real_mean()
        n_draws = 20000
        draws = np.empty(n_draws)
        for t in range(n_draws):
            sampler.update_noise_variance(RngStream(900 + t))
            draws[t] = state.sigma_y_sq
        a, b = state.hyper.noise_shape + 5.0, state.hyper.noise_rate
        target_mean = b / (a - 1)
        se = np.sqrt(b**2 / ((a - 1) ** 2 * (a - 2))) / np.sqrt(n_draws)
        assert abs(draws.mean() - target_mean) < 4 * se

    def test_no_observations_prior_draw(self):
        sampler, state, ds = build_instance(seed=5, n=4, q=(), m_real=1, missing=0.0)
        ds.real_missing[:] = True
        sampler2 = GibbsSampler(state, ds)
        shape, rate = sampler2.noise_variance_posterior()
        assert shape == state.hyper.noise_shape and rate == state.hyper.noise_rate


class TestLeftRightVectorPosterior:
    def test_scalar_case_hand_derivation(self):
        # K=1, one real cell, binaries all one, weight 1, v = (1):
        # precision = 1 + design^2 / sigma_y^2
        sampler, state, ds = build_instance(seed=6, n=1, q=(), m_real=1, k=1, missing=0.0)
        reg = state.reg_y
        reg.active[:] = 1
        reg.weight[:] = 1.0
        reg.v[0] = [1.0]
        state.bits_rows[:] = 1
        state.bits_real[:] = 1
        state.sigma_y_sq = 0.5
        sampler.refresh_real_residual()
        prec, rhs = sampler.u_posterior("y", 0)
        design = 1.0  # weight * <c, v> * r
        assert np.isclose(prec[0, 0], 1.0 + design**2 / 0.5, atol=1e-12)
        resid = ds.real[0, 0]
        assert np.isclose(rhs[0], design * resid / 0.5, atol=1e-12)

    def test_all_rows_zero_gives_prior(self):
        sampler, state, ds = build_instance(seed=7)
        state.bits_rows[:] = 0
        sampler.refresh_cat_residual()
        sampler.refresh_real_residual()
        for side in ("x", "y"):
            reg = state.reg_x if side == "x" else state.reg_y
            reg.active[:] = 1
            prec, rhs = sampler.u_posterior(side, 0)
            np.testing.assert_allclose(prec, np.eye(2), atol=1e-12)
            np.testing.assert_allclose(rhs, 0.0, atol=1e-12)

    @pytest.mark.parametrize("side", ["x", "y"])
    def test_full_conditional_against_grid(self, side):
        # grid the first coordinate of the left vector, holding the rest
        sampler, state, ds = build_instance(seed=8, missing=0.3)
        reg = state.reg_x if side == "x" else state.reg_y
        reg.active[:] = 1
        sampler.refresh_cat_residual()
        sampler.refresh_real_residual()
        prec, rhs = sampler.u_posterior(side, 0)
        # implied conditional of coordinate 0 given coordinate 1
        mean = np.linalg.solve(prec, rhs)
        cond_var = 1.0 / prec[0, 0]
        cond_mean = mean[0] + (reg.u[0, 1] - mean[1]) * (-prec[0, 1] * cond_var)

        def logpdf(x):
            saved = reg.u[0, 0]
            reg.u[0, 0] = x
            total = (
                cat_loglik(state, ds)
                + real_loglik(state, ds)
                + stats.norm.logpdf(x)
                + stats.norm.logpdf(reg.u[0, 1])
            )
            reg.u[0, 0] = saved
            return total

        grid = np.linspace(cond_mean - 6 * np.sqrt(cond_var), cond_mean + 6 * np.sqrt(cond_var), 401)
        dens = conditional_density_1d(logpdf, grid)
        num_mean, num_var = grid_mean_var(grid, dens)
        assert abs(num_mean - cond_mean) < 1e-6
        assert abs(num_var - cond_var) < 1e-6

    @pytest.mark.parametrize("side", ["x", "y"])
    def test_right_vector_conditional_against_grid(self, side):
        sampler, state, ds = build_instance(seed=9, missing=0.25)
        reg = state.reg_x if side == "x" else state.reg_y
        reg.active[:] = 1
        sampler.refresh_cat_residual()
        sampler.refresh_real_residual()
        prec, rhs = sampler.v_posterior(side, 1)
        mean = np.linalg.solve(prec, rhs)
        cond_var = 1.0 / prec[0, 0]
        cond_mean = mean[0] + (reg.v[1, 1] - mean[1]) * (-prec[0, 1] * cond_var)

        def logpdf(x):
            saved = reg.v[1, 0]
            reg.v[1, 0] = x
            total = (
                cat_loglik(state, ds)
                + real_loglik(state, ds)
                + stats.norm.logpdf(x)
                + stats.norm.logpdf(reg.v[1, 1])
            )
            reg.v[1, 0] = saved
            return total

        grid = np.linspace(cond_mean - 6 * np.sqrt(cond_var), cond_mean + 6 * np.sqrt(cond_var), 401)
        dens = conditional_density_1d(logpdf, grid)
        num_mean, num_var = grid_mean_var(grid, dens)
        assert abs(num_mean - cond_mean) < 1e-6
        assert abs(num_var - cond_var) < 1e-6


class TestWeightPosterior:
    @pytest.mark.parametrize("side", ["x", "y"])
    def test_truncated_conditional_against_grid(self, side):
        sampler, state, ds = build_instance(seed=10)
        reg = state.reg_x if side == "x" else state.reg_y
        reg.active[:] = 1
        sampler.refresh_cat_residual()
        sampler.refresh_real_residual()
        mean, var = sampler.lambda_posterior(side, 0)

        def logpdf(lam):
            saved = reg.weight[0]
            reg.weight[0] = lam
            total = (
                cat_loglik(state, ds)
                + real_loglik(state, ds)
                + stats.norm.logpdf(lam, scale=np.sqrt(reg.scale_sq))
            )
            reg.weight[0] = saved
            return total

        sd = np.sqrt(var)
        grid = np.linspace(max(1e-9, mean - 6 * sd), max(mean, 0) + 6 * sd, 601)
        dens = conditional_density_1d(logpdf, grid)
        num_mean, num_var = grid_mean_var(grid, dens)
        a = (0.0 - mean) / sd
        theory_mean = stats.truncnorm.mean(a, np.inf, loc=mean, scale=sd)
        theory_var = stats.truncnorm.var(a, np.inf, loc=mean, scale=sd)
        assert abs(num_mean - theory_mean) < 1e-5
        assert abs(num_var - theory_var) < 1e-5


class TestBinaryFeatureConditional:
    @pytest.mark.parametrize("mode", ["correlated", "independent"])
    def test_rows_two_point_enumeration(self, mode):
        sampler, state, ds = build_instance(seed=11, n=2, q=(2,), m_real=1, k=2, mode=mode)
        for k in range(2):
            logodds = sampler.feature_logodds_rows(k)
            for i in range(2):
                mine = 1 / (1 + np.exp(-logodds[i]))
                oracle = bit_conditional_prob(state, ds, "rows", i, k)
                assert abs(mine - oracle) < 1e-10

    def test_rows_with_multicategory_attribute(self):
        sampler, state, ds = build_instance(seed=12, n=3, q=(3, 2), m_real=1, k=2, missing=0.3)
        logodds = sampler.feature_logodds_rows(1)
        for i in range(3):
            mine = 1 / (1 + np.exp(-logodds[i]))
            oracle = bit_conditional_prob(state, ds, "rows", i, 1)
            assert abs(mine - oracle) < 1e-10

    def test_cat_entities_binary_and_multi(self):
        sampler, state, ds = build_instance(seed=13, n=3, q=(2, 3), m_real=0, k=2, missing=0.2)
        logodds_bin = sampler.feature_logodds_cat_binary(0)
        oracle = bit_conditional_prob(state, ds, "cat", 0, 0)
        assert abs(1 / (1 + np.exp(-logodds_bin[0])) - oracle) < 1e-10
        for comp in range(2):
            e = 1 + comp
            lo = sampler.feature_logodds_cat_multi(1, comp, 1)
            oracle = bit_conditional_prob(state, ds, "cat", e, 1)
            assert abs(1 / (1 + np.exp(-lo)) - oracle) < 1e-10

    def test_real_entities(self):
        sampler, state, ds = build_instance(seed=14, n=3, q=(), m_real=3, k=2)
        logodds = sampler.feature_logodds_real(0)
        for j in range(3):
            mine = 1 / (1 + np.exp(-logodds[j]))
            oracle = bit_conditional_prob(state, ds, "real", j, 0)
            assert abs(mine - oracle) < 1e-10

    def test_certain_prior_pins_bit(self):
        sampler, state, ds = build_instance(seed=15, n=2, q=(2,), m_real=1, k=2)
        state.prior_rows.factors[:] = 0.0
        state.prior_rows.loadings[:] = 0.0
        state.prior_rows.factors[0, 0] = 1e8
        state.prior_rows.loadings[:, 0] = 1.0  # activation prob -> 1 for feature 0
        gen = RngStream(16).gen
        logodds = sampler.feature_logodds_rows(0)
        assert np.all(1 / (1 + np.exp(-logodds)) > 1 - 1e-12)

    def test_no_observations_prior_sampling(self):
        sampler, state, ds = build_instance(seed=17, n=2, q=(2,), m_real=1, k=2)
        ds.cat_missing[:] = True
        ds.real_missing[:] = True
        sampler2 = GibbsSampler(state, ds)
        sampler2.refresh_cat_residual()
        sampler2.refresh_real_residual()
        logodds = sampler2.feature_logodds_rows(0)
        prior = state.prior_rows.activation_prob(0)
        np.testing.assert_allclose(1 / (1 + np.exp(-logodds)), prior, atol=1e-12)


class TestRankIndicatorConditional:
    @pytest.mark.parametrize("side", ["x", "y"])
    def test_two_point_enumeration(self, side):
        sampler, state, ds = build_instance(seed=18, n=3, q=(2, 3), m_real=2, k=2)
        for l in range(2):
            logodds = sampler.rank_logodds(side, l)
            mine = 1 / (1 + np.exp(-logodds))
            oracle = rank_conditional_prob(state, ds, side, l)
            assert abs(mine - oracle) < 1e-10

    def test_no_data_prior_odds(self):
        sampler, state, ds = build_instance(seed=19, n=2, q=(2,), m_real=1, k=2)
        ds.cat_missing[:] = True
        ds.real_missing[:] = True
        sampler2 = GibbsSampler(state, ds)
        sampler2.refresh_cat_residual()
        sampler2.refresh_real_residual()
        for side in ("x", "y"):
            reg = state.reg_x if side == "x" else state.reg_y
            logodds = sampler2.rank_logodds(side, 0)
            assert np.isclose(
                1 / (1 + np.exp(-logodds)), reg.include_prob, atol=1e-12
            )

    def test_overwhelming_evidence(self):
        # a term that perfectly explains a strong signal is kept
        sampler, state, ds = build_instance(seed=20, n=4, q=(), m_real=2, k=1, missing=0.0)
        reg = state.reg_y
        reg.active[:] = 1
        reg.weight[:] = 5.0
        reg.u[0] = [1.0]
        reg.v[0] = [1.0]
        state.bits_rows[:] = 1
        state.bits_real[:] = 1
        state.sigma_y_sq = 0.01
        ds.real[:] = state.real_mean()
        sampler.refresh_real_residual()
        logodds = sampler.rank_logodds("y", 0)
        assert 1 / (1 + np.exp(-logodds)) > 1 - 1e-10


class TestBetaLatents:
    def test_support_and_consistency(self):
        sampler, state, ds = build_instance(seed=21, n=6, q=(2, 3, 4), m_real=0, missing=0.2)
        for t in range(15):
            sampler.update_beta_latents(RngStream(100 + t))
            for j in range(ds.m_cat):
                sl = state.cat_slice(j)
                obs = ~ds.cat_missing[:, j]
                decoded = decode_matrix(state.beta[obs, sl])
                np.testing.assert_array_equal(decoded, ds.cat[obs, j])

    def test_binary_halfnormal_longrun(self):
        # q=2, zero mean, observed category 1: stationary beta is half-normal
        sampler, state, ds = build_instance(seed=22, n=1, q=(2,), m_real=0, k=1, missing=0.0)
        ds.cat[0, 0] = 1
        state.bits_rows[:] = 0
        sampler.refresh_cat_residual()
        draws = np.empty(20000)
        for t in range(20000):
            sampler.update_beta_latents(RngStream(200 + t))
            draws[t] = state.beta[0, 0]
        assert np.all(draws > 0)
        target = np.sqrt(2 / np.pi)
        se = np.sqrt(1 - 2 / np.pi) / np.sqrt(20000)
        assert abs(draws.mean() - target) < 4 * se


class TestJacobian:
    def test_printed_example(self):
        # q=3, variances (1, 4): product d^((q-2)/2) = 2
        assert np.isclose(
            np.exp(log_jacobian_cov_to_corr_diag([1.0, 4.0], 3)), 2.0, atol=1e-12
        )

    @pytest.mark.parametrize("q", [3, 4, 5])
    def test_matches_numerical_differentiation(self, q):
        gen = RngStream(23 + q).gen
        p = q - 1
        a = gen.standard_normal((p, p + 2))
        cov = a @ a.T + 0.5 * np.eye(p)
        corr, d = np.corrcoef(cov / np.sqrt(np.outer(np.diag(cov), np.diag(cov)))), np.diag(cov)
        corr = cov / np.sqrt(np.outer(d, d))
        np.fill_diagonal(corr, 1.0)
        numeric = numerical_jacobian_cov_to_corr(corr, d)
        analytic = np.exp(log_jacobian_cov_to_corr_diag(d, q))
        assert abs(numeric - analytic) / analytic < 1e-6


class TestSigmaMh:
    def test_binary_attribute_noop(self):
        sampler, state, ds = build_instance(seed=24, n=3, q=(2,), m_real=0)
        assert sampler.update_sigma_j(0, RngStream(1)) is False
        assert state.noise_cov[0].cov[0, 0] == 1.0

    def test_prior_only_matches_forward(self):
        # all cells of the attribute missing: stationary law of the restricted
        # covariance equals the forward Wishart pushforward
        hyper = HyperParams(n_features=2, wishart_df=8.0, wishart_scale=1.0)
        n = 4
        ds = RelationalDataset(
            cat=np.zeros((n, 1), dtype=int),
            q=[3],
            real=np.zeros((n, 0)),
            cat_missing=np.ones((n, 1), bool),
            real_missing=np.zeros((n, 0), bool),
        )
        state = ModelState(n, [3], 0, hyper)
        sampler = GibbsSampler(state, ds)
        rng = RngStream(25)
        offs = []
        for t in range(30000):
            sampler.update_sigma_j(0, rng.substream(t))
            if t >= 2000 and t % 5 == 0:
                offs.append(state.noise_cov[0].cov[0, 1])
        gen = RngStream(26).gen
        fwd = []
        for _ in range(6000):
            w = sample_wishart(8.0, np.eye(2), gen)
            fwd.append(w[0, 1] / np.sqrt(w[0, 0]))
        ks = stats.ks_2samp(offs[::5], fwd[::5])
        assert ks.pvalue > 1e-3

    def test_acceptance_restores_restriction(self):
        sampler, state, ds = build_instance(seed=27, n=5, q=(4,), m_real=0, missing=0.0)
        rng = RngStream(28)
        accepted = 0
        for t in range(300):
            accepted += sampler.update_sigma_j(0, rng.substream(t))
            cov = state.noise_cov[0]
            assert np.isclose(cov.cov[0, 0], 1.0, atol=1e-12)
            np.linalg.cholesky(cov.cov)
        assert accepted > 0
