"""The MCMC engine: one sweep updates every latent block in a fixed order.

Block order per sweep: categorical latent vectors, then the three binary
feature families, then each side's low-rank regression (left/right vectors,
weights, rank indicators, inclusion probability, optionally the weight
scale), then the categorical noise covariances (Metropolis-Hastings), the
real noise variance, and finally the feature-prior factor blocks.

Every conditional that feeds a draw is exposed as a ``*_posterior`` /
``*_logodds`` method returning its deterministic parameters, so tests can
check them against enumeration and quadrature oracles independent of the
sampling path.

Randomness is keyed: block b of sweep t draws from ``substream("sweep", t,
b)``, which makes resumed runs bit-identical to uninterrupted ones.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .data import RelationalDataset
from .distributions import (
    RngStream,
    as_generator,
    log_wishart_pdf,
    sample_beta,
    sample_inverse_gamma,
    sample_truncated_normal,
    sample_wishart,
)
from .state import (
    HyperParams,
    ModelState,
    cov_to_corr_diag,
    restrict_cov,
)
from .trace import PosteriorTrace

__all__ = [
    "GibbsSampler",
    "SweepSchedule",
    "MhDiagnostics",
    "run",
    "log_jacobian_cov_to_corr_diag",
    "default_blocks",
]


def log_jacobian_cov_to_corr_diag(variances, n_categories):
    """Log Jacobian of the covariance -> (correlation, variance) transform
    for one categorical attribute: prod_l d_l ** ((q - 2) / 2)."""
    d = np.asarray(variances, dtype=float)
    if np.any(d <= 0):
        raise ValueError("variances must be positive")
    return 0.5 * (n_categories - 2) * float(np.sum(np.log(d)))


def default_blocks(m_cat, m_real, any_multicat):
    blocks = []
    if m_cat:
        blocks.append("probit_latents")
    blocks.append("features_rows")
    if m_cat:
        blocks.append("features_cat_cols")
    if m_real:
        blocks.append("features_real_cols")
    if m_cat:
        blocks.append("lowrank_cat")
    if m_real:
        blocks.append("lowrank_real")
    if any_multicat:
        blocks.append("noise_cov")
    if m_real:
        blocks.append("noise_variance")
    blocks.append("factor_rows")
    if m_cat:
        blocks.append("factor_cat_cols")
    if m_real:
        blocks.append("factor_real_cols")
    return blocks


@dataclass
class SweepSchedule:
    """Block order and iteration counts of one MCMC run."""

    blocks: list
    total: int
    burn_in: int
    thin: int

    def validate(self, known_blocks):
        for name in self.blocks:
            if name not in known_blocks:
                raise ValueError(f"unknown update block {name!r}")
        if not 0 <= self.burn_in < self.total:
            raise ValueError("burn-in must be below the iteration total")
        if self.thin < 1:
            raise ValueError("thinning interval must be at least 1")
        return self

    def retained_iterations(self):
        return [
            t
            for t in range(self.total)
            if t >= self.burn_in and (t - self.burn_in + 1) % self.thin == 0
        ]


@dataclass
class MhDiagnostics:
    """Per-attribute MH acceptance plus the per-sweep log-joint trace."""

    accepted: dict = field(default_factory=dict)
    proposed: dict = field(default_factory=dict)
    rejected_nonspd: dict = field(default_factory=dict)
    log_joint: list = field(default_factory=list)
    block_seconds: dict = field(default_factory=dict)

    def rate(self, j):
        n = self.proposed.get(j, 0)
        return self.accepted.get(j, 0) / n if n else float("nan")

    def rates(self):
        return {j: self.rate(j) for j in sorted(self.proposed)}


class GibbsSampler:
    """Couples a model state to a dataset and performs block updates."""

    def __init__(self, state: ModelState, ds: RelationalDataset):
        self.state = state
        self.ds = ds
        self.obs_cat = ~ds.cat_missing
        self.obs_real = ~ds.real_missing
        # observation mask expanded to the flattened (attribute, choice) axis
        reps = (state.q - 1).astype(int)
        self.obs_ent = (
            np.repeat(self.obs_cat, reps, axis=1) if state.m_cat else np.zeros((ds.n_rows, 0), bool)
        )
        self.binary_attrs = np.flatnonzero(state.q == 2)
        self.multi_attrs = [int(j) for j in np.flatnonzero(state.q > 2)]
        self.binary_entities = np.array(
            [state.cat_offsets[j] for j in self.binary_attrs], dtype=np.int64
        )
        self.res_cat = np.zeros_like(state.beta)
        self.res_real = np.zeros((ds.n_rows, state.m_real))
        self.diagnostics = MhDiagnostics()
        self.blocks = {
            "probit_latents": self.update_beta_latents,
            "features_rows": self.update_features_rows,
            "features_cat_cols": self.update_features_cat,
            "features_real_cols": self.update_features_real,
            "lowrank_cat": lambda rng: self.update_lowrank("x", rng),
            "lowrank_real": lambda rng: self.update_lowrank("y", rng),
            "noise_cov": self.update_noise_cov,
            "noise_variance": self.update_noise_variance,
            "factor_rows": lambda rng: self.state.prior_rows.sweep(self.state.bits_rows, rng),
            "factor_cat_cols": lambda rng: self.state.prior_cat.sweep(self.state.bits_cat, rng),
            "factor_real_cols": lambda rng: self.state.prior_real.sweep(self.state.bits_real, rng),
        }

    # -- residual bookkeeping ---------------------------------------------------

    def refresh_cat_residual(self):
        if self.state.m_cat:
            self.res_cat = self.state.beta - self.state.beta_mean()

    def refresh_real_residual(self):
        if self.state.m_real:
            self.res_real = self.ds.real - self.state.real_mean()

    # -- categorical latent vectors ----------------------------------------------

    def update_beta_latents(self, rng):
        """Gibbs scan of every latent coordinate, restricted to the region
        consistent with the observed category (unrestricted when missing)."""
        state, ds = self.state, self.ds
        gen = as_generator(rng)
        mean = state.beta_mean()

        if self.binary_attrs.size:
            ent = self.binary_entities
            codes = ds.cat[:, self.binary_attrs]
            missing = ds.cat_missing[:, self.binary_attrs]
            lower = np.where(missing, -np.inf, np.where(codes == 1, 0.0, -np.inf))
            upper = np.where(missing, np.inf, np.where(codes == 1, np.inf, 0.0))
            state.beta[:, ent] = sample_truncated_normal(
                mean[:, ent], 1.0, lower, upper, gen
            )

        for j in self.multi_attrs:
            sl = state.cat_slice(j)
            cov = state.noise_cov[j]
            dim = cov.dim
            codes = ds.cat[:, j]
            missing = ds.cat_missing[:, j]
            block = state.beta[:, sl]
            mu = mean[:, sl]
            for comp in range(dim):
                others = np.delete(np.arange(dim), comp)
                cov_oo = cov.cov[np.ix_(others, others)]
                cov_co = cov.cov[comp, others]
                w = np.linalg.solve(cov_oo, cov_co)
                cond_mean = mu[:, comp] + (block[:, others] - mu[:, others]) @ w
                cond_var = float(cov.cov[comp, comp] - cov_co @ w)
                top = block[:, others].max(axis=1) if others.size else np.full(len(block), -np.inf)
                is_target = codes == comp + 1
                # category 0: all components below 0; category p: component p
                # above 0 and above the rest, others below component p
                target_vals = block[np.arange(len(block)), np.maximum(codes - 1, 0)]
                lower = np.where(is_target, np.maximum(0.0, top), -np.inf)
                upper = np.where(is_target, np.inf, np.where(codes == 0, 0.0, target_vals))
                lower = np.where(missing, -np.inf, lower)
                upper = np.where(missing, np.inf, upper)
                block[:, comp] = sample_truncated_normal(cond_mean, cond_var, lower, upper, gen)
        self.refresh_cat_residual()

    # -- binary feature bits -------------------------------------------------------

    def _cat_quad_terms(self, vec):
        """Per-attribute pieces for a direction ``vec`` over the flattened axis:
        returns (sinv_vec, quad) with sinv_vec = Sigma_j^{-1} vec_j per block and
        quad[j] = vec_j' Sigma_j^{-1} vec_j."""
        state = self.state
        sinv_vec = vec.copy()
        quad = np.zeros(state.m_cat)
        if self.binary_attrs.size:
            ent = self.binary_entities
            quad[self.binary_attrs] = vec[ent] ** 2
        for j in self.multi_attrs:
            sl = state.cat_slice(j)
            siv = state.noise_cov[j].inv @ vec[sl]
            sinv_vec[sl] = siv
            quad[j] = float(vec[sl] @ siv)
        return sinv_vec, quad

    def feature_logodds_rows(self, k):
        """Log posterior odds that each row's feature k is on."""
        state = self.state
        prior = state.prior_rows.activation_prob(k)
        with np.errstate(divide="ignore"):
            logodds = special.logit(prior)
        bit = state.bits_rows[:, k].astype(float)
        if state.m_cat:
            g = state.bits_cat @ state.m_x()[k, :]
            sinv_g, quad = self._cat_quad_terms(g)
            res0 = self.res_cat + bit[:, None] * g[None, :]
            t1 = ((res0 * self.obs_ent) @ sinv_g)
            t2 = self.obs_cat @ quad
            logodds = logodds + t1 - 0.5 * t2
        if state.m_real:
            g = state.bits_real @ state.m_y()[k, :]
            res0 = self.res_real + bit[:, None] * g[None, :]
            t1 = (res0 * self.obs_real) @ g
            t2 = self.obs_real @ (g**2)
            logodds = logodds + (t1 - 0.5 * t2) / state.sigma_y_sq
        return logodds

    def update_features_rows(self, rng):
        state = self.state
        gen = as_generator(rng)
        self.refresh_cat_residual()
        self.refresh_real_residual()
        for k in range(state.hyper.n_features):
            logodds = self.feature_logodds_rows(k)
            new = (gen.uniform(size=state.n_rows) < special.expit(logodds)).astype(np.uint8)
            delta = new.astype(float) - state.bits_rows[:, k]
            changed = delta != 0
            if np.any(changed):
                if state.m_cat:
                    g = state.bits_cat @ state.m_x()[k, :]
                    self.res_cat -= np.outer(delta, g)
                if state.m_real:
                    g = state.bits_real @ state.m_y()[k, :]
                    self.res_real -= np.outer(delta, g)
                state.bits_rows[:, k] = new
            state.prior_rows.gibbs_update_eta(state.bits_rows[:, k], gen, k=k)

    def feature_logodds_cat_binary(self, k):
        """Log odds for feature k of every binary-attribute column entity."""
        state = self.state
        ent = self.binary_entities
        prior = state.prior_cat.activation_prob(k)[ent]
        with np.errstate(divide="ignore"):
            logodds = special.logit(prior)
        a = state.bits_rows @ state.m_x()[:, k]
        obs = self.obs_ent[:, ent]
        res0 = self.res_cat[:, ent] + np.outer(a, state.bits_cat[ent, k].astype(float))
        t1 = a @ (res0 * obs)
        t2 = (a**2) @ obs
        return logodds + t1 - 0.5 * t2

    def feature_logodds_cat_multi(self, j, comp, k):
        """Log odds for feature k of choice ``comp`` (0-based) of attribute j."""
        state = self.state
        sl = state.cat_slice(j)
        e = state.cat_offsets[j] + comp
        prior = state.prior_cat.activation_prob(k)[e]
        with np.errstate(divide="ignore"):
            logodds = float(special.logit(prior))
        a = state.bits_rows @ state.m_x()[:, k]
        sinv = state.noise_cov[j].inv
        res0 = self.res_cat[:, sl].copy()
        res0[:, comp] += float(state.bits_cat[e, k]) * a
        sres = res0 @ sinv[:, comp]
        obs = self.obs_cat[:, j]
        t1 = float(np.sum(a * sres * obs))
        t2 = float(sinv[comp, comp] * np.sum(a * a * obs))
        return logodds + t1 - 0.5 * t2

    def update_features_cat(self, rng):
        state = self.state
        gen = as_generator(rng)
        self.refresh_cat_residual()
        for k in range(state.hyper.n_features):
            a = state.bits_rows @ state.m_x()[:, k]
            if self.binary_entities.size:
                ent = self.binary_entities
                logodds = self.feature_logodds_cat_binary(k)
                new = (gen.uniform(size=ent.size) < special.expit(logodds)).astype(np.uint8)
                delta = new.astype(float) - state.bits_cat[ent, k]
                self.res_cat[:, ent] -= np.outer(a, delta)
                state.bits_cat[ent, k] = new
            for j in self.multi_attrs:
                for comp in range(int(state.q[j]) - 1):
                    e = state.cat_offsets[j] + comp
                    logodds = self.feature_logodds_cat_multi(j, comp, k)
                    new = np.uint8(gen.uniform() < special.expit(logodds))
                    delta = float(new) - float(state.bits_cat[e, k])
                    if delta:
                        self.res_cat[:, e] -= a * delta
                        state.bits_cat[e, k] = new
            state.prior_cat.gibbs_update_eta(state.bits_cat[:, k], gen, k=k)

    def feature_logodds_real(self, k):
        state = self.state
        prior = state.prior_real.activation_prob(k)
        with np.errstate(divide="ignore"):
            logodds = special.logit(prior)
        a = state.bits_rows @ state.m_y()[:, k]
        res0 = self.res_real + np.outer(a, state.bits_real[:, k].astype(float))
        t1 = a @ (res0 * self.obs_real)
        t2 = (a**2) @ self.obs_real
        return logodds + (t1 - 0.5 * t2) / state.sigma_y_sq

    def update_features_real(self, rng):
        state = self.state
        gen = as_generator(rng)
        self.refresh_real_residual()
        for k in range(state.hyper.n_features):
            logodds = self.feature_logodds_real(k)
            new = (gen.uniform(size=state.m_real) < special.expit(logodds)).astype(np.uint8)
            delta = new.astype(float) - state.bits_real[:, k]
            if np.any(delta != 0):
                a = state.bits_rows @ state.m_y()[:, k]
                self.res_real -= np.outer(a, delta)
                state.bits_real[:, k] = new
            state.prior_real.gibbs_update_eta(state.bits_real[:, k], gen, k=k)

    # -- low-rank regression blocks --------------------------------------------------

    def _side(self, side):
        state = self.state
        if side == "x":
            return state.reg_x, state.bits_cat, self.res_cat, self.obs_ent
        return state.reg_y, state.bits_real, self.res_real, self.obs_real

    def _term_residual(self, side, l):
        """Residual with term l's contribution added back (i.e. excluded from
        the fitted mean), plus the term's current direction products."""
        state = self.state
        reg, col_bits, res, _ = self._side(side)
        left = state.bits_rows @ reg.u[l]
        right = col_bits @ reg.v[l]
        if reg.active[l]:
            res_minus = res + reg.weight[l] * np.outer(left, right)
        else:
            res_minus = res
        return res_minus, left, right

    def u_posterior(self, side, l):
        """Precision and precision-weighted mean of the left vector's
        conditional, assuming the term is active."""
        state = self.state
        reg, col_bits, _, obs = self._side(side)
        res_minus, _, right = self._term_residual(side, l)
        lam = reg.weight[l]
        rows = state.bits_rows.astype(float)
        if side == "x":
            sinv_r, quad = self._cat_quad_terms(right)
            s_i = self.obs_cat @ quad
            t_i = (res_minus * self.obs_ent) @ sinv_r
        else:
            s_i = (self.obs_real @ (right**2)) / state.sigma_y_sq
            t_i = ((res_minus * self.obs_real) @ right) / state.sigma_y_sq
        prec = np.eye(state.hyper.n_features) + lam**2 * (rows * s_i[:, None]).T @ rows
        rhs = lam * rows.T @ t_i
        return prec, rhs

    def v_posterior(self, side, l):
        """Precision and precision-weighted mean of the right vector's
        conditional, assuming the term is active."""
        state = self.state
        reg, col_bits, _, obs = self._side(side)
        res_minus, left, _ = self._term_residual(side, l)
        lam = reg.weight[l]
        cols = col_bits.astype(float)
        k = state.hyper.n_features
        alpha2 = left**2
        if side == "x":
            prec = np.eye(k)
            rhs = np.zeros(k)
            wr = res_minus * left[:, None]
            if self.binary_attrs.size:
                ent = self.binary_entities
                w = alpha2 @ self.obs_ent[:, ent]
                b = cols[ent]
                prec += lam**2 * (b * w[:, None]).T @ b
                inner = np.sum(wr[:, ent] * self.obs_ent[:, ent], axis=0)
                rhs += lam * b.T @ inner
            for j in self.multi_attrs:
                sl = state.cat_slice(j)
                obs_j = self.obs_cat[:, j]
                sinv = state.noise_cov[j].inv
                bj = cols[sl]
                w = float(alpha2 @ obs_j)
                prec += lam**2 * w * bj.T @ sinv @ bj
                inner = (wr[:, sl] * obs_j[:, None]).sum(axis=0)
                rhs += lam * bj.T @ (sinv @ inner)
        else:
            w = alpha2 @ self.obs_real
            prec = np.eye(k) + (lam**2 / state.sigma_y_sq) * (cols * w[:, None]).T @ cols
            inner = (res_minus * left[:, None] * self.obs_real).sum(axis=0)
            rhs = (lam / state.sigma_y_sq) * cols.T @ inner
        return prec, rhs

    def lambda_posterior(self, side, l):
        """(mean, var) of the weight's conditional truncated-normal,
        assuming the term is active."""
        state = self.state
        res_minus, left, right = self._term_residual(side, l)
        reg, _, _, _ = self._side(side)
        if side == "x":
            sinv_r, quad = self._cat_quad_terms(right)
            s_i = self.obs_cat @ quad
            t_i = (res_minus * self.obs_ent) @ sinv_r
        else:
            s_i = (self.obs_real @ (right**2)) / state.sigma_y_sq
            t_i = ((res_minus * self.obs_real) @ right) / state.sigma_y_sq
        tau = 1.0 / reg.scale_sq + float(left @ (left * s_i))
        nu = float(left @ t_i)
        return nu / tau, 1.0 / tau

    def rank_logodds(self, side, l):
        """Log posterior odds that rank-one term l is included."""
        state = self.state
        reg, _, _, _ = self._side(side)
        res_minus, left, right = self._term_residual(side, l)
        lam = reg.weight[l]
        if side == "x":
            sinv_r, quad = self._cat_quad_terms(right)
            s_i = self.obs_cat @ quad
            t_i = (res_minus * self.obs_ent) @ sinv_r
        else:
            s_i = (self.obs_real @ (right**2)) / state.sigma_y_sq
            t_i = ((res_minus * self.obs_real) @ right) / state.sigma_y_sq
        delta = lam * float(left @ t_i) - 0.5 * lam**2 * float(left @ (left * s_i))
        with np.errstate(divide="ignore"):
            return float(special.logit(reg.include_prob)) + delta

    def _draw_mvn_from_precision(self, prec, rhs, gen):
        try:
            chol = np.linalg.cholesky(prec)
        except np.linalg.LinAlgError as exc:
            raise FloatingPointError("conditional precision not SPD") from exc
        mean = np.linalg.solve(prec, rhs)
        z = gen.standard_normal(len(rhs))
        return mean + np.linalg.solve(chol.T, z)

    def update_lowrank(self, side, rng):
        """Left/right vectors, weights, and rank indicators for one side, then
        the inclusion probability and (optionally) the weight scale.

        While term l is being redrawn it is "parked": its contribution is
        added back into the residual and its indicator cleared, so every
        conditional below sees the model without the term.
        """
        state = self.state
        gen = as_generator(rng)
        reg, col_bits, _, _ = self._side(side)
        if side == "x":
            self.refresh_cat_residual()
        else:
            self.refresh_real_residual()
        k = state.hyper.n_features

        for l in range(k):
            res_minus, _, _ = self._term_residual(side, l)
            self._install_residual(side, res_minus)
            was_active = bool(reg.active[l])
            reg.active[l] = 0

            if was_active:
                prec, rhs = self.u_posterior(side, l)
                reg.u[l] = self._draw_mvn_from_precision(prec, rhs, gen)
                prec, rhs = self.v_posterior(side, l)
                reg.v[l] = self._draw_mvn_from_precision(prec, rhs, gen)
                mean, var = self.lambda_posterior(side, l)
                reg.weight[l] = sample_truncated_normal(mean, var, 0.0, np.inf, gen)
            else:
                reg.u[l] = gen.standard_normal(k)
                reg.v[l] = gen.standard_normal(k)
                reg.weight[l] = sample_truncated_normal(0.0, reg.scale_sq, 0.0, np.inf, gen)

            logodds = self.rank_logodds(side, l)
            reg.active[l] = np.uint8(gen.uniform() < special.expit(logodds))
            if reg.active[l]:
                left = state.bits_rows @ reg.u[l]
                right = col_bits @ reg.v[l]
                self._install_residual(side, res_minus - reg.weight[l] * np.outer(left, right))

        n_on = int(reg.active.sum())
        reg.include_prob = float(sample_beta(1.0 / k + n_on, 1.0 + k - n_on, gen))
        if state.hyper.sample_lambda_scale:
            shape = state.hyper.lambda_scale_shape + 0.5 * k
            rate = state.hyper.lambda_scale_rate + 0.5 * float(np.sum(reg.weight**2))
            reg.scale_sq = float(sample_inverse_gamma(shape, rate, gen))

    def _install_residual(self, side, res):
        if side == "x":
            self.res_cat = res
        else:
            self.res_real = res

    # -- noise parameters ---------------------------------------------------------

    def noise_variance_posterior(self):
        """Conjugate inverse-gamma (shape, rate) for the real noise variance."""
        state = self.state
        n_obs = int(self.obs_real.sum())
        ssq = float(np.sum((self.res_real**2) * self.obs_real))
        return state.hyper.noise_shape + 0.5 * n_obs, state.hyper.noise_rate + 0.5 * ssq

    def update_noise_variance(self, rng):
        self.refresh_real_residual()
        shape, rate = self.noise_variance_posterior()
        self.state.sigma_y_sq = float(sample_inverse_gamma(shape, rate, rng))

    def _cat_loglik_cov(self, j, cov):
        """Log likelihood of attribute j's observed latent vectors under a
        candidate restricted covariance."""
        state = self.state
        sl = state.cat_slice(j)
        obs = self.obs_cat[:, j]
        resid = self.res_cat[obs, sl]
        n = resid.shape[0]
        if n == 0:
            return 0.0
        chol = np.linalg.cholesky(cov)
        sol = np.linalg.solve(chol, resid.T)
        logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
        return -0.5 * (
            n * cov.shape[0] * np.log(2.0 * np.pi) + n * logdet + float(np.sum(sol**2))
        )

    def update_sigma_j(self, j, rng):
        """Metropolis-Hastings step for one multi-category noise covariance.

        The chain lives on the unrestricted (extended) covariance; proposals
        are Wishart draws centered on the current restriction, and the
        likelihood only sees restricted matrices.  Returns the accept flag.
        """
        state = self.state
        cov = state.noise_cov[j]
        if cov.dim == 1:
            return False
        gen = as_generator(rng)
        hyper = state.hyper
        m0 = hyper.wishart_df
        omega = hyper.wishart_scale * np.eye(cov.dim)

        current_ext = cov.extended
        current_res = cov.cov
        candidate_ext = sample_wishart(m0, current_ext / m0, gen)
        self.diagnostics.proposed[j] = self.diagnostics.proposed.get(j, 0) + 1
        try:
            candidate_res = restrict_cov(candidate_ext)
            np.linalg.cholesky(candidate_res)
        except np.linalg.LinAlgError:
            self.diagnostics.rejected_nonspd[j] = self.diagnostics.rejected_nonspd.get(j, 0) + 1
            return False

        log_alpha = (
            self._cat_loglik_cov(j, candidate_res)
            + log_wishart_pdf(candidate_ext, m0, omega)
            + log_wishart_pdf(current_ext, m0, candidate_ext / m0)
            - self._cat_loglik_cov(j, current_res)
            - log_wishart_pdf(current_ext, m0, omega)
            - log_wishart_pdf(candidate_ext, m0, current_ext / m0)
        )
        if np.log(gen.uniform()) < log_alpha:
            cov.set_extended(candidate_ext)
            self.diagnostics.accepted[j] = self.diagnostics.accepted.get(j, 0) + 1
            return True
        return False

    def update_noise_cov(self, rng):
        self.refresh_cat_residual()
        gen = as_generator(rng)
        for j in self.multi_attrs:
            self.update_sigma_j(j, gen)

    # -- one sweep -------------------------------------------------------------------

    def sweep(self, rng, block_names=None):
        """Run every block once in schedule order under keyed substreams."""
        names = block_names or default_blocks(
            self.state.m_cat, self.state.m_real, bool(self.multi_attrs)
        )
        for name in names:
            fn = self.blocks[name]
            block_rng = rng.substream(name) if isinstance(rng, RngStream) else rng
            started = time.perf_counter()
            fn(block_rng)
            self.diagnostics.block_seconds[name] = (
                self.diagnostics.block_seconds.get(name, 0.0)
                + time.perf_counter()
                - started
            )


# ---------------------------------------------------------------------------
# full run with retention, checkpointing, and progress logging
# ---------------------------------------------------------------------------

def _allocate_trace(state: ModelState, schedule: SweepSchedule):
    n = len(schedule.retained_iterations())
    k = state.hyper.n_features
    arrays = {
        "log_joint": np.zeros(n),
        "bits_rows": np.zeros((n, state.n_rows, k), dtype=np.uint8),
        "bits_cat": np.zeros((n, state.n_cat_entities, k), dtype=np.uint8),
        "bits_real": np.zeros((n, state.m_real, k), dtype=np.uint8),
        "sigma_y_sq": np.zeros(n),
    }
    for side, reg in (("x", state.reg_x), ("y", state.reg_y)):
        dim = k if reg is not None else 0
        arrays[f"weight_{side}"] = np.zeros((n, dim))
        arrays[f"active_{side}"] = np.zeros((n, dim), dtype=np.uint8)
        arrays[f"u_{side}"] = np.zeros((n, dim, dim))
        arrays[f"v_{side}"] = np.zeros((n, dim, dim))
    for name, prior in (
        ("rows", state.prior_rows),
        ("cat", state.prior_cat),
        ("real", state.prior_real),
    ):
        if prior is not None and prior.mode == "correlated":
            arrays[f"loadings_{name}"] = np.zeros(
                (n, prior.n_entities, prior.n_factors)
            )
        else:
            arrays[f"loadings_{name}"] = np.zeros((n, 0, 0))
    for j, cov in enumerate(state.noise_cov):
        if cov.dim > 1:
            arrays[f"noise_cov_{j}"] = np.zeros((n, cov.dim, cov.dim))
    return arrays


def _record_sample(arrays, s, state: ModelState, log_joint):
    arrays["log_joint"][s] = log_joint
    arrays["bits_rows"][s] = state.bits_rows
    arrays["bits_cat"][s] = state.bits_cat
    arrays["bits_real"][s] = state.bits_real
    arrays["sigma_y_sq"][s] = state.sigma_y_sq
    for side, reg in (("x", state.reg_x), ("y", state.reg_y)):
        if reg is None:
            continue
        arrays[f"weight_{side}"][s] = reg.weight
        arrays[f"active_{side}"][s] = reg.active
        arrays[f"u_{side}"][s] = reg.u
        arrays[f"v_{side}"][s] = reg.v
    for name, prior in (
        ("rows", state.prior_rows),
        ("cat", state.prior_cat),
        ("real", state.prior_real),
    ):
        if prior is not None and prior.mode == "correlated":
            arrays[f"loadings_{name}"][s] = prior.loadings
    for j, cov in enumerate(state.noise_cov):
        if cov.dim > 1:
            arrays[f"noise_cov_{j}"][s] = cov.cov


def run(
    ds: RelationalDataset,
    config,
    rng=None,
    progress_path=None,
    checkpoint_path=None,
    resume_from=None,
    progress_every=50,
):
    """Fit the model and return the retained-sample trace.

    ``config`` is a :class:`latentmix.config.RunConfig`.  When
    ``checkpoint_path`` is set, a checkpoint is written every
    ``config.checkpoint_every`` sweeps and on abort; ``resume_from``
    continues a checkpointed run bit-reproducibly.
    """
    from .checkpoint import load_checkpoint, save_checkpoint  # local import, no cycle

    config.validate()
    hyper = config.hyper()
    root = rng if isinstance(rng, RngStream) else RngStream(config.seed)
    schedule = SweepSchedule(
        blocks=default_blocks(ds.m_cat, ds.m_real, bool(np.any(ds.q > 2))),
        total=config.total_iters,
        burn_in=config.burn_in,
        thin=config.thin,
    )

    meta = {
        "config": config.to_dict(),
        "q": [int(x) for x in ds.q],
        "n_rows": ds.n_rows,
        "m_real": ds.m_real,
        "row_labels": list(ds.row_labels),
        "cat_labels": list(ds.cat_labels),
        "real_labels": list(ds.real_labels),
        "cat_entity_labels": ds.cat_entity_labels(),
    }

    if resume_from is not None:
        state, start_iter, saved_arrays, filled = load_checkpoint(resume_from, ds, hyper)
        sampler = GibbsSampler(state, ds)
        schedule.validate(sampler.blocks)
        # reallocate for this run's schedule; the retained prefix must agree
        arrays = _allocate_trace(state, schedule)
        filled = min(filled, len(schedule.retained_iterations()))
        for name, arr in arrays.items():
            arr[:filled] = saved_arrays[name][:filled]
    else:
        state = ModelState(ds.n_rows, ds.q, ds.m_real, hyper)
        state.init_overdispersed(ds, root.substream("init"))
        sampler = GibbsSampler(state, ds)
        schedule.validate(sampler.blocks)
        arrays = _allocate_trace(state, schedule)
        start_iter, filled = 0, 0

    retained = schedule.retained_iterations()
    progress_fh = open(progress_path, "a") if progress_path else None
    try:
        for t in range(start_iter, schedule.total):
            try:
                sampler.sweep(root.substream("sweep", t), schedule.blocks)
            except Exception:
                if checkpoint_path is not None:
                    save_checkpoint(checkpoint_path, state, t, arrays, filled, meta)
                raise
            lj = state.log_joint(ds)
            sampler.diagnostics.log_joint.append(lj)
            if filled < len(retained) and t == retained[filled]:
                _record_sample(arrays, filled, state, lj)
                filled += 1
            if progress_fh and ((t + 1) % progress_every == 0 or t + 1 == schedule.total):
                progress_fh.write(
                    json.dumps(
                        {
                            "iteration": t + 1,
                            "log_joint": lj,
                            "mh_accept": sampler.diagnostics.rates(),
                            "block_seconds": {
                                k: round(v, 4)
                                for k, v in sampler.diagnostics.block_seconds.items()
                            },
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )
                progress_fh.flush()
            if (
                checkpoint_path is not None
                and config.checkpoint_every
                and (t + 1) % config.checkpoint_every == 0
            ):
                save_checkpoint(checkpoint_path, state, t + 1, arrays, filled, meta)
    finally:
        if progress_fh:
            progress_fh.close()

    trace = PosteriorTrace(arrays, meta)
    return trace, sampler.diagnostics
