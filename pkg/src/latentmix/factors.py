"""Priors over binary feature matrices for one entity family.

The correlated prior draws, for each latent feature k, a Gaussian vector over
entities with covariance ``B @ B.T + I`` and thresholds it at zero, so
entities sharing nonzero loading rows get correlated features.  Loadings
carry a spike-and-slab prior with per-entity slab variances and per-column
inclusion probabilities; identification fixes the upper triangle of ``B`` to
zero and its diagonal positive.

The independent prior is the ablation used for prior comparisons: each
feature is Bernoulli with an entity-independent, per-feature probability
drawn from Beta(alpha/K, 1).
"""

from __future__ import annotations

import numpy as np
from scipy import special

from .distributions import (
    as_generator,
    log_bernoulli_pmf,
    log_beta_pdf,
    log_inverse_gamma_pdf,
    log_normal_pdf,
    log_truncnorm_pdf,
    sample_beta,
    sample_inverse_gamma,
    sample_truncated_normal,
)

__all__ = ["CorrelatedFeaturePrior", "IndependentFeaturePrior", "make_feature_prior"]


class CorrelatedFeaturePrior:
    """Sparse-factor multivariate probit prior over a D x K binary matrix.

    State: loadings ``B`` (D x n_factors, lower-triangular pattern), factor
    scores ``f`` (n_factors x K, one column per feature), latent Gaussians
    ``eta`` (D x K), slab variances ``v`` (D,), column inclusion
    probabilities ``pi`` (n_factors,).
    """

    mode = "correlated"

    def __init__(self, n_entities, n_factors, n_features, slab_c=1.0, slab_d=1.0):
        self.n_entities = int(n_entities)
        self.n_factors = int(n_factors)
        self.n_features = int(n_features)
        self.slab_c = float(slab_c)
        self.slab_d = float(slab_d)
        d, kf, k = self.n_entities, self.n_factors, self.n_features
        self.loadings = np.zeros((d, kf))
        self.factors = np.zeros((kf, k))
        self.eta = np.zeros((d, k))
        self.slab_var = np.ones(d)
        self.include_prob = np.full(kf, 0.5)

    # -- structure helpers ---------------------------------------------------

    def free_rows(self, k):
        """Rows of column k that carry a spike-slab entry (below the diagonal)."""
        return np.arange(k + 1, self.n_entities)

    def has_diagonal(self, k):
        return k < self.n_entities

    def validate(self):
        d, kf = self.loadings.shape
        cols, rows = np.meshgrid(np.arange(kf), np.arange(d))
        if np.any(self.loadings[cols > rows] != 0.0):
            raise ValueError("structural zero violated in loading matrix")
        diag = np.diag(self.loadings)
        if np.any(diag[: min(d, kf)] <= 0):
            raise ValueError("diagonal loading not positive")

    # -- derived quantities ---------------------------------------------------

    def implied_covariance(self):
        b = self.loadings
        return b @ b.T + np.eye(self.n_entities)

    def implied_correlation(self):
        cov = self.implied_covariance()
        scale = np.sqrt(np.diag(cov))
        corr = cov / np.outer(scale, scale)
        np.fill_diagonal(corr, 1.0)
        return corr

    def activation_prob(self, k=None):
        """Pr(feature active) per entity, marginalizing the latent Gaussian:
        Phi(B @ f_k) since eta ~ N(B f_k, 1) componentwise."""
        if k is None:
            return special.ndtr(self.loadings @ self.factors)
        return special.ndtr(self.loadings @ self.factors[:, k])

    def marginal_activation_prob(self, i, k):
        return float(special.ndtr(self.loadings[i] @ self.factors[:, k]))

    # -- Gibbs updates ---------------------------------------------------------

    def gibbs_update_eta(self, bits, rng, k=None):
        """Refresh latent Gaussians to match the bit signs.

        ``bits`` is the D-vector of feature k when ``k`` is given, else the
        full D x K matrix.
        """
        gen = as_generator(rng)
        if k is None:
            mean = self.loadings @ self.factors
            target = np.asarray(bits, dtype=bool)
            lower = np.where(target, 0.0, -np.inf)
            upper = np.where(target, np.inf, 0.0)
            self.eta = sample_truncated_normal(mean, 1.0, lower, upper, gen)
        else:
            mean = self.loadings @ self.factors[:, k]
            target = np.asarray(bits, dtype=bool)
            lower = np.where(target, 0.0, -np.inf)
            upper = np.where(target, np.inf, 0.0)
            self.eta[:, k] = sample_truncated_normal(mean, 1.0, lower, upper, gen)

    def gibbs_update_factors(self, rng):
        """Conjugate draw of every factor-score column given loadings and eta."""
        gen = as_generator(rng)
        b = self.loadings
        prec = np.eye(self.n_factors) + b.T @ b
        chol = np.linalg.cholesky(prec)
        mean = np.linalg.solve(prec, b.T @ self.eta)
        noise = np.linalg.solve(chol.T, gen.standard_normal((self.n_factors, self.n_features)))
        self.factors = mean + noise

    def loading_inclusion_logodds(self, k):
        """Per-row log posterior odds of the slab for free entries of column k
        (exposed for oracle tests). Returns (rows, logodds, post_mean, post_var)."""
        rows = self.free_rows(k)
        if rows.size == 0:
            return rows, np.empty(0), np.empty(0), np.empty(0)
        fk = self.factors[k]
        ss = float(fk @ fk)
        resid = self.eta[rows] - self.loadings[rows] @ self.factors + np.outer(
            self.loadings[rows, k], fk
        )
        s = resid @ fk
        tau = 1.0 / self.slab_var[rows] + ss
        m = s / tau
        logodds = (
            special.logit(self.include_prob[k])
            - 0.5 * np.log(self.slab_var[rows] * tau)
            + 0.5 * m * m * tau
        )
        return rows, logodds, m, 1.0 / tau

    def gibbs_update_loadings(self, rng):
        """Spike-slab scan of B (column passes, rows vectorized), then the
        conjugate slab-variance and inclusion-probability draws."""
        gen = as_generator(rng)
        for k in range(self.n_factors):
            rows, logodds, m, var = self.loading_inclusion_logodds(k)
            if rows.size:
                include = gen.uniform(size=rows.size) < special.expit(logodds)
                new = np.where(include, m + np.sqrt(var) * gen.standard_normal(rows.size), 0.0)
                self.loadings[rows, k] = new
            if self.has_diagonal(k):
                fk = self.factors[k]
                ss = float(fk @ fk)
                resid = self.eta[k] - self.loadings[k] @ self.factors + self.loadings[k, k] * fk
                tau = 1.0 / self.slab_var[k] + ss
                m_diag = float(resid @ fk) / tau
                self.loadings[k, k] = sample_truncated_normal(m_diag, 1.0 / tau, 0.0, np.inf, gen)

        nonzero = self.loadings != 0.0
        n_i = nonzero.sum(axis=1)
        ssq = (self.loadings**2).sum(axis=1)
        self.slab_var = sample_inverse_gamma(
            (self.slab_c + n_i) / 2.0, 1.0, gen, size=self.n_entities
        )
        # sample_inverse_gamma draws rate/Gamma(shape); rescale by each rate
        self.slab_var *= (self.slab_c * self.slab_d + ssq) / 2.0

        for k in range(self.n_factors):
            rows = self.free_rows(k)
            n1 = int(np.count_nonzero(self.loadings[rows, k])) if rows.size else 0
            n0 = rows.size - n1
            self.include_prob[k] = sample_beta(1.0 + n1, 1.0 + n0, gen)

    def sweep(self, bits, rng):
        """One full update of the family block: eta, factors, loadings."""
        self.gibbs_update_eta(bits, rng)
        self.gibbs_update_factors(rng)
        self.gibbs_update_loadings(rng)

    # -- prior simulation and densities ----------------------------------------

    def draw_from_prior(self, rng):
        """Draw all family state (loadings, factors, eta) from the prior and
        return the implied bit matrix."""
        gen = as_generator(rng)
        d, kf, k = self.n_entities, self.n_factors, self.n_features
        self.slab_var = sample_inverse_gamma(
            self.slab_c / 2.0, self.slab_c * self.slab_d / 2.0, gen, size=d
        )
        self.include_prob = gen.beta(1.0, 1.0, size=kf)
        self.loadings = np.zeros((d, kf))
        for col in range(kf):
            rows = self.free_rows(col)
            if rows.size:
                keep = gen.uniform(size=rows.size) < self.include_prob[col]
                vals = gen.standard_normal(rows.size) * np.sqrt(self.slab_var[rows])
                self.loadings[rows, col] = np.where(keep, vals, 0.0)
            if self.has_diagonal(col):
                self.loadings[col, col] = sample_truncated_normal(
                    0.0, self.slab_var[col], 0.0, np.inf, gen
                )
        self.factors = gen.standard_normal((kf, k))
        self.eta = self.loadings @ self.factors + gen.standard_normal((d, k))
        return (self.eta > 0).astype(np.uint8)

    def log_prior(self, bits):
        """Log density of this family's state: eta given (B, f), f, B with its
        spike-slab prior, slab variances, and inclusion probabilities.
        Returns -inf if eta signs disagree with the bits."""
        bits = np.asarray(bits, dtype=bool)
        if np.any((self.eta > 0) != bits):
            return -np.inf
        total = float(np.sum(log_normal_pdf(self.eta, self.loadings @ self.factors, 1.0)))
        total += float(np.sum(log_normal_pdf(self.factors, 0.0, 1.0)))
        for k in range(self.n_factors):
            rows = self.free_rows(k)
            if rows.size:
                b = self.loadings[rows, k]
                nonzero = b != 0.0
                total += float(np.log1p(-self.include_prob[k])) * int(np.sum(~nonzero))
                if np.any(nonzero):
                    total += float(
                        np.sum(
                            np.log(self.include_prob[k])
                            + log_normal_pdf(b[nonzero], 0.0, self.slab_var[rows][nonzero])
                        )
                    )
            if self.has_diagonal(k):
                total += float(
                    log_truncnorm_pdf(self.loadings[k, k], 0.0, self.slab_var[k], 0.0, np.inf)
                )
            total += float(log_beta_pdf(self.include_prob[k], 1.0, 1.0))
        total += float(
            np.sum(
                log_inverse_gamma_pdf(
                    self.slab_var, self.slab_c / 2.0, self.slab_c * self.slab_d / 2.0
                )
            )
        )
        return total

    def active_factor_count(self):
        """Number of loading columns with any nonzero element."""
        return int(np.count_nonzero(np.any(self.loadings != 0.0, axis=0)))


class IndependentFeaturePrior:
    """Entity-exchangeable beta-Bernoulli feature prior (ablation mode)."""

    mode = "independent"

    def __init__(self, n_entities, n_features, alpha=1.0):
        self.n_entities = int(n_entities)
        self.n_features = int(n_features)
        self.alpha = float(alpha)
        self.feat_prob = np.full(n_features, 0.5)

    def activation_prob(self, k=None):
        if k is None:
            return np.broadcast_to(self.feat_prob, (self.n_entities, self.n_features)).copy()
        return np.full(self.n_entities, self.feat_prob[k])

    def marginal_activation_prob(self, i, k):
        return float(self.feat_prob[k])

    def implied_correlation(self):
        return np.eye(self.n_entities)

    def sweep(self, bits, rng):
        gen = as_generator(rng)
        ones = np.asarray(bits).sum(axis=0)
        a = self.alpha / self.n_features + ones
        b = 1.0 + self.n_entities - ones
        self.feat_prob = gen.beta(a, b)

    def gibbs_update_eta(self, bits, rng, k=None):
        """No latent Gaussians in this mode."""

    def draw_from_prior(self, rng):
        gen = as_generator(rng)
        self.feat_prob = gen.beta(
            self.alpha / self.n_features, 1.0, size=self.n_features
        )
        draws = gen.uniform(size=(self.n_entities, self.n_features)) < self.feat_prob
        return draws.astype(np.uint8)

    def log_prior(self, bits):
        bits = np.asarray(bits)
        total = float(np.sum(log_bernoulli_pmf(bits, self.feat_prob[None, :])))
        total += float(
            np.sum(log_beta_pdf(self.feat_prob, self.alpha / self.n_features, 1.0))
        )
        return total

    def active_factor_count(self):
        return 0


def make_feature_prior(mode, n_entities, n_factors, n_features, slab_c=1.0, slab_d=1.0, alpha=1.0):
    if mode == "correlated":
        return CorrelatedFeaturePrior(n_entities, n_factors, n_features, slab_c, slab_d)
    if mode == "independent":
        return IndependentFeaturePrior(n_entities, n_features, alpha)
    raise ValueError(f"unknown feature prior mode: {mode}")
