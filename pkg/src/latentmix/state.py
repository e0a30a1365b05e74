"""All model latent variables and the deterministic maps among them.

The generative story: every row, categorical column-choice, and real column
carries a binary feature vector of length K.  Two low-rank matrices built
from weighted rank-one terms map row/column feature pairs to cell means: a
categorical cell goes through a latent Gaussian vector thresholded by the
max/sign decode rule, a real cell adds plain Gaussian noise.  Feature
matrices get their priors from :mod:`latentmix.factors`.

Categorical noise covariances with more than one free dimension keep an
unrestricted "extended" matrix (the MH proposal space) alongside the
identified restriction whose top-left entry is exactly 1; likelihoods only
ever see the restricted matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import RelationalDataset
from .distributions import (
    as_generator,
    log_beta_pdf,
    log_bernoulli_pmf,
    log_inverse_gamma_pdf,
    log_mvn_pdf,
    log_normal_pdf,
    log_truncnorm_pdf,
    log_wishart_pdf,
    sample_mvn,
    sample_truncated_normal,
)
from .factors import make_feature_prior

__all__ = [
    "HyperParams",
    "LowRankRegression",
    "CategoricalNoiseCov",
    "ModelState",
    "assemble_regression_matrix",
    "effective_rank",
    "probit_decode",
    "cov_to_corr_diag",
    "corr_diag_to_cov",
    "restrict_cov",
]


@dataclass
class HyperParams:
    """Fixed hyperparameters of the model."""

    n_features: int = 20  # K, shared truncation for all binary vectors
    n_factors_rows: int = 6
    n_factors_cat: int = 6
    n_factors_real: int = 6
    slab_c: float = 1.0
    slab_d: float = 1.0
    sigma_lambda_sq: float = 1.0
    sample_lambda_scale: bool = False
    lambda_scale_shape: float = 1.0
    lambda_scale_rate: float = 1.0
    wishart_df: float = 8.0  # m0: prior and proposal degrees of freedom
    wishart_scale: float = 1.0  # prior scale matrix is wishart_scale * I
    noise_shape: float = 1.0  # inverse-gamma prior on the real noise variance
    noise_rate: float = 1.0
    prior_mode: str = "correlated"  # or "independent"
    ibp_alpha: float = 1.0


class LowRankRegression:
    """One side's sum of weighted rank-one terms.

    ``u[l]`` and ``v[l]`` are the left/right vectors of term l, ``weight[l]``
    its positive scale, ``active[l]`` the inclusion indicator.  The assembled
    matrix is ``sum_l weight[l] * active[l] * outer(u[l], v[l])``.
    """

    def __init__(self, n_features):
        k = int(n_features)
        self.n_features = k
        self.weight = np.ones(k)
        self.active = np.ones(k, dtype=np.uint8)
        self.u = np.zeros((k, k))
        self.v = np.zeros((k, k))
        self.include_prob = 0.5
        self.scale_sq = 1.0

    def assemble(self):
        w = self.weight * self.active
        return (self.u * w[:, None]).T @ self.v

    def effective_rank(self):
        return int(self.active.sum())

    def validate(self):
        if np.any(self.weight <= 0):
            raise ValueError("rank-one weights must be positive")
        if not 0 <= self.include_prob <= 1:
            raise ValueError("inclusion probability outside [0, 1]")
        if self.scale_sq <= 0:
            raise ValueError("weight scale must be positive")


def assemble_regression_matrix(lr: LowRankRegression):
    return lr.assemble()


def effective_rank(lr: LowRankRegression):
    return lr.effective_rank()


# ---------------------------------------------------------------------------
# covariance decomposition helpers (correlation x variance coordinates)
# ---------------------------------------------------------------------------

def cov_to_corr_diag(cov):
    """Split a covariance into (correlation matrix, variance vector)."""
    cov = np.asarray(cov, dtype=float)
    d = np.diag(cov).copy()
    s = np.sqrt(d)
    corr = cov / np.outer(s, s)
    np.fill_diagonal(corr, 1.0)
    return corr, d


def corr_diag_to_cov(corr, d):
    s = np.sqrt(np.asarray(d, dtype=float))
    return np.asarray(corr) * np.outer(s, s)


def restrict_cov(cov):
    """Reset the first variance to 1, keeping correlations and the rest."""
    corr, d = cov_to_corr_diag(cov)
    d = d.copy()
    d[0] = 1.0
    return corr_diag_to_cov(corr, d)


class CategoricalNoiseCov:
    """Noise covariance of one categorical attribute's latent vector.

    Attributes with 2 categories have a single latent dimension whose
    variance is pinned to 1 (``extended is None``).  Larger attributes keep
    the unrestricted ``extended`` matrix; ``cov`` is its restriction with
    top-left entry exactly 1, which is what the likelihood uses.
    """

    def __init__(self, n_categories):
        self.n_categories = int(n_categories)
        p = self.n_categories - 1
        if p < 1:
            raise ValueError("attribute needs at least 2 categories")
        if p == 1:
            self.extended = None
            self._cov = np.ones((1, 1))
        else:
            self.extended = np.eye(p)
            self._cov = np.eye(p)
        self._refresh()

    @property
    def dim(self):
        return self.n_categories - 1

    @property
    def cov(self):
        return self._cov

    def set_extended(self, extended):
        if self.extended is None:
            raise ValueError("binary attribute covariance is fixed to 1")
        self.extended = np.asarray(extended, dtype=float)
        self._cov = restrict_cov(self.extended)
        self._refresh()

    def _refresh(self):
        self._chol = np.linalg.cholesky(self._cov)
        self._inv = np.linalg.inv(self._cov)

    @property
    def inv(self):
        return self._inv

    @property
    def chol(self):
        return self._chol

    def validate(self):
        if abs(self._cov[0, 0] - 1.0) > 1e-12:
            raise ValueError("noise covariance top-left entry must be 1")
        if self.extended is not None:
            np.linalg.cholesky(self.extended)


def probit_decode(beta):
    """Map a latent vector to its category.

    Category 0 when every component is negative; otherwise the 1-based index
    of the largest component (smallest index wins ties).
    """
    beta = np.asarray(beta, dtype=float)
    if beta.ndim != 1 or beta.size == 0:
        raise ValueError("latent vector must be 1-d and nonempty")
    if np.max(beta) < 0:
        return 0
    return int(np.argmax(beta)) + 1


def decode_matrix(block):
    """Vectorized decode of an (N, q-1) block of latent vectors."""
    block = np.asarray(block, dtype=float)
    best = np.argmax(block, axis=1)
    top = block[np.arange(block.shape[0]), best]
    return np.where(top < 0, 0, best + 1).astype(np.int64)


class ModelState:
    """Joint latent state for one dataset shape.

    Binary feature matrices: ``bits_rows`` (N x K), ``bits_cat``
    (sum(q-1) x K, attribute-major/choice-minor flattening), ``bits_real``
    (M2 x K).  ``beta`` stacks the categorical latent vectors as an
    N x sum(q-1) matrix sharing the same flattening.
    """

    def __init__(self, n_rows, q, m_real, hyper: HyperParams):
        self.n_rows = int(n_rows)
        self.q = np.asarray(q, dtype=np.int64)
        self.m_cat = len(self.q)
        self.m_real = int(m_real)
        self.hyper = hyper

        sizes = self.q - 1
        self.cat_offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        self.n_cat_entities = int(sizes.sum())

        k = hyper.n_features
        self.bits_rows = np.zeros((self.n_rows, k), dtype=np.uint8)
        self.bits_cat = np.zeros((self.n_cat_entities, k), dtype=np.uint8)
        self.bits_real = np.zeros((self.m_real, k), dtype=np.uint8)

        self.reg_x = LowRankRegression(k) if self.m_cat else None
        self.reg_y = LowRankRegression(k) if self.m_real else None
        self.noise_cov = [CategoricalNoiseCov(int(qj)) for qj in self.q]
        self.beta = np.zeros((self.n_rows, self.n_cat_entities))
        self.sigma_y_sq = 1.0

        def _prior(n_entities, n_factors):
            return make_feature_prior(
                hyper.prior_mode,
                n_entities,
                n_factors,
                k,
                slab_c=hyper.slab_c,
                slab_d=hyper.slab_d,
                alpha=hyper.ibp_alpha,
            )

        self.prior_rows = _prior(self.n_rows, hyper.n_factors_rows)
        self.prior_cat = _prior(self.n_cat_entities, hyper.n_factors_cat) if self.m_cat else None
        self.prior_real = _prior(self.m_real, hyper.n_factors_real) if self.m_real else None

    # -- flattening helpers ----------------------------------------------------

    def cat_slice(self, j):
        return slice(int(self.cat_offsets[j]), int(self.cat_offsets[j + 1]))

    def entity_index(self, j, p):
        """Flattened index of choice p (1-based) of attribute j."""
        if not 1 <= p <= self.q[j] - 1:
            raise ValueError(f"choice {p} outside 1..{self.q[j] - 1}")
        return int(self.cat_offsets[j]) + p - 1

    # -- deterministic maps -----------------------------------------------------

    def m_x(self):
        return self.reg_x.assemble()

    def m_y(self):
        return self.reg_y.assemble()

    def beta_mean(self):
        """N x sum(q-1) matrix of latent-vector means."""
        return (self.bits_rows @ self.m_x()) @ self.bits_cat.T

    def real_mean(self):
        """N x M2 matrix of real-cell means."""
        return (self.bits_rows @ self.m_y()) @ self.bits_real.T

    def predict_beta_mean(self, i, j, p):
        e = self.entity_index(j, p)
        return float(self.bits_rows[i] @ self.m_x() @ self.bits_cat[e])

    def predict_real_mean(self, i, j):
        return float(self.bits_rows[i] @ self.m_y() @ self.bits_real[j])

    def category_probabilities(self, i, j, n_mc, rng):
        """Monte Carlo estimate of the cell's category distribution.

        Empirical frequencies over ``n_mc`` noise draws, so the vector sums
        to 1 exactly.
        """
        if n_mc < 1:
            raise ValueError("n_mc must be at least 1")
        gen = as_generator(rng)
        cov = self.noise_cov[j]
        mean = (self.bits_rows[i] @ self.m_x()) @ self.bits_cat[self.cat_slice(j)].T
        noise = gen.standard_normal((n_mc, cov.dim)) @ cov.chol.T
        draws = decode_matrix(mean[None, :] + noise)
        counts = np.bincount(draws, minlength=int(self.q[j]))
        probs = counts / float(n_mc)
        probs[np.argmax(probs)] += 1.0 - probs.sum()  # pin the exact-sum contract
        return probs

    # -- joint density -----------------------------------------------------------

    def validate(self):
        for bits in (self.bits_rows, self.bits_cat, self.bits_real):
            if bits.size and not np.all((bits == 0) | (bits == 1)):
                raise ValueError("binary feature matrix has entries outside {0, 1}")
        for j, cov in enumerate(self.noise_cov):
            try:
                cov.validate()
            except ValueError as exc:
                raise ValueError(f"noise covariance of attribute {j}: {exc}") from exc
        for reg, name in ((self.reg_x, "categorical"), (self.reg_y, "real")):
            if reg is not None:
                try:
                    reg.validate()
                except ValueError as exc:
                    raise ValueError(f"{name}-side regression: {exc}") from exc
        if self.m_real and self.sigma_y_sq <= 0:
            raise ValueError("real noise variance must be positive")
        for prior in (self.prior_rows, self.prior_cat, self.prior_real):
            if prior is not None and hasattr(prior, "validate"):
                prior.validate()

    def _log_prior_regression(self, reg):
        k = self.hyper.n_features
        total = float(np.sum(log_truncnorm_pdf(reg.weight, 0.0, reg.scale_sq, 0.0, np.inf)))
        total += float(np.sum(log_normal_pdf(reg.u, 0.0, 1.0)))
        total += float(np.sum(log_normal_pdf(reg.v, 0.0, 1.0)))
        total += float(np.sum(log_bernoulli_pmf(reg.active, reg.include_prob)))
        total += float(log_beta_pdf(reg.include_prob, 1.0 / k, 1.0))
        if self.hyper.sample_lambda_scale:
            total += float(
                log_inverse_gamma_pdf(
                    reg.scale_sq,
                    self.hyper.lambda_scale_shape,
                    self.hyper.lambda_scale_rate,
                )
            )
        return total

    def log_joint(self, ds: RelationalDataset):
        """Log of the joint density of data, latents, and parameters.

        Missing cells contribute nothing.  Latent vectors inconsistent with
        their observed categories give -inf; structural invariant violations
        raise.
        """
        self.validate()
        total = 0.0

        if self.m_cat:
            mean = self.beta_mean()
            for j in range(self.m_cat):
                sl = self.cat_slice(j)
                obs = ~ds.cat_missing[:, j]
                if not np.any(obs):
                    continue
                block = self.beta[obs, sl]
                if np.any(decode_matrix(block) != ds.cat[obs, j]):
                    return -np.inf
                cov = self.noise_cov[j]
                if cov.dim == 1:
                    total += float(np.sum(log_normal_pdf(block[:, 0], mean[obs, sl][:, 0], 1.0)))
                else:
                    total += float(np.sum(log_mvn_pdf(block, mean[obs, sl], cov.cov)))
            for j, cov in enumerate(self.noise_cov):
                if cov.extended is not None:
                    omega = self.hyper.wishart_scale * np.eye(cov.dim)
                    total += float(log_wishart_pdf(cov.extended, self.hyper.wishart_df, omega))
            total += self._log_prior_regression(self.reg_x)

        if self.m_real:
            obs = ~ds.real_missing
            if np.any(obs):
                mean = self.real_mean()
                total += float(
                    np.sum(log_normal_pdf(ds.real[obs], mean[obs], self.sigma_y_sq))
                )
            total += float(
                log_inverse_gamma_pdf(
                    self.sigma_y_sq, self.hyper.noise_shape, self.hyper.noise_rate
                )
            )
            total += self._log_prior_regression(self.reg_y)

        total += self.prior_rows.log_prior(self.bits_rows)
        if self.prior_cat is not None:
            total += self.prior_cat.log_prior(self.bits_cat)
        if self.prior_real is not None:
            total += self.prior_real.log_prior(self.bits_real)
        return total

    # -- initialization -----------------------------------------------------------

    def init_overdispersed(self, ds: RelationalDataset, rng):
        """Supported but overdispersed starting point for the chain."""
        gen = as_generator(rng)
        k = self.hyper.n_features
        self.bits_rows = (gen.uniform(size=self.bits_rows.shape) < 0.5).astype(np.uint8)
        self.bits_cat = (gen.uniform(size=self.bits_cat.shape) < 0.5).astype(np.uint8)
        self.bits_real = (gen.uniform(size=self.bits_real.shape) < 0.5).astype(np.uint8)
        for reg in (self.reg_x, self.reg_y):
            if reg is None:
                continue
            reg.scale_sq = self.hyper.sigma_lambda_sq
            reg.weight = np.abs(gen.standard_normal(k)) * np.sqrt(reg.scale_sq)
            reg.weight = np.maximum(reg.weight, 1e-8)
            reg.active = np.ones(k, dtype=np.uint8)
            reg.u = gen.standard_normal((k, k))
            reg.v = gen.standard_normal((k, k))
            reg.include_prob = 0.5
        self.sigma_y_sq = 1.0
        for prior, bits in (
            (self.prior_rows, self.bits_rows),
            (self.prior_cat, self.bits_cat),
            (self.prior_real, self.bits_real),
        ):
            if prior is not None:
                prior.gibbs_update_eta(bits, gen)
        if self.m_cat:
            # draw beta consistent with observed categories
            mean = self.beta_mean()
            for j in range(self.m_cat):
                sl = self.cat_slice(j)
                cov = self.noise_cov[j]
                for i in range(self.n_rows):
                    target = None if ds.cat_missing[i, j] else int(ds.cat[i, j])
                    self.beta[i, sl] = _draw_beta_cell(
                        mean[i, sl], cov, target, gen, self.beta[i, sl]
                    )
        return self


def _draw_beta_cell(mean, cov, target, gen, current, n_scans=4):
    """Draw one cell's latent vector consistent with ``target`` (None = free)."""
    p = cov.dim
    if target is None:
        if p == 1:
            return mean + gen.standard_normal(1)
        return sample_mvn(mean, cov.cov, gen)
    if p == 1:
        if target == 0:
            return np.array([sample_truncated_normal(mean[0], 1.0, -np.inf, 0.0, gen)])
        return np.array([sample_truncated_normal(mean[0], 1.0, 0.0, np.inf, gen)])
    beta = np.array(current, dtype=float)
    if probit_decode(beta) != target:
        # start from a supported configuration
        beta = np.where(np.arange(p) == target - 1, 1.0, -1.0) if target else -np.ones(p)
    for _ in range(n_scans):
        for comp in range(p):
            others = np.delete(np.arange(p), comp)
            cov_oo = cov.cov[np.ix_(others, others)]
            cov_co = cov.cov[comp, others]
            sol = np.linalg.solve(cov_oo, beta[others] - mean[others])
            cond_mean = mean[comp] + cov_co @ sol
            cond_var = cov.cov[comp, comp] - cov_co @ np.linalg.solve(cov_oo, cov_co)
            if target == 0:
                lo, hi = -np.inf, 0.0
            elif comp == target - 1:
                rest = np.delete(beta, comp)
                lo, hi = max(0.0, float(rest.max())), np.inf
            else:
                lo, hi = -np.inf, float(beta[target - 1])
            beta[comp] = sample_truncated_normal(cond_mean, cond_var, lo, hi, gen)
    return beta
