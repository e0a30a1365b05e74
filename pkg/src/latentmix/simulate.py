"""Forward sampling of the generative model.

Used by the ``simulate`` CLI command, the synthetic-recovery studies, and the
joint-distribution correctness tests (which require drawing exactly from the
prior).  Planting options pin the effective rank of either regression matrix
and the number of active covariance factors, with optional floors on the
rank-one weights and loadings so planted structure is detectable.
"""

from __future__ import annotations

import numpy as np

from .data import RelationalDataset
from .distributions import as_generator, sample_inverse_gamma, sample_truncated_normal, sample_wishart
from .state import HyperParams, ModelState, decode_matrix

__all__ = ["draw_prior_state", "draw_data", "simulate_dataset"]


def draw_prior_state(n_rows, q, m_real, hyper: HyperParams, rng) -> ModelState:
    """Draw every latent variable from its prior."""
    gen = as_generator(rng)
    state = ModelState(n_rows, q, m_real, hyper)
    k = hyper.n_features

    state.bits_rows = state.prior_rows.draw_from_prior(gen)
    if state.prior_cat is not None:
        state.bits_cat = state.prior_cat.draw_from_prior(gen)
    if state.prior_real is not None:
        state.bits_real = state.prior_real.draw_from_prior(gen)

    for reg in (state.reg_x, state.reg_y):
        if reg is None:
            continue
        if hyper.sample_lambda_scale:
            reg.scale_sq = float(
                sample_inverse_gamma(hyper.lambda_scale_shape, hyper.lambda_scale_rate, gen)
            )
        else:
            reg.scale_sq = hyper.sigma_lambda_sq
        reg.include_prob = float(gen.beta(1.0 / k, 1.0))
        reg.active = (gen.uniform(size=k) < reg.include_prob).astype(np.uint8)
        reg.weight = sample_truncated_normal(
            np.zeros(k), reg.scale_sq, 0.0, np.inf, gen
        )
        reg.u = gen.standard_normal((k, k))
        reg.v = gen.standard_normal((k, k))

    for j, cov in enumerate(state.noise_cov):
        if cov.extended is not None:
            omega = hyper.wishart_scale * np.eye(cov.dim)
            cov.set_extended(sample_wishart(hyper.wishart_df, omega, gen))
    if state.m_real:
        state.sigma_y_sq = float(
            sample_inverse_gamma(hyper.noise_shape, hyper.noise_rate, gen)
        )
    return state


def _plant_factors(prior, n_active, loading_scale, gen):
    """Overwrite a correlated prior's loadings with exactly ``n_active``
    dense, strong columns (diagonal positive, upper triangle zero)."""
    d, kf = prior.loadings.shape
    b = np.zeros((d, kf))
    for col in range(min(n_active, kf, d)):
        rows = np.arange(col + 1, d)
        b[rows, col] = gen.standard_normal(rows.size) * loading_scale
        b[col, col] = abs(gen.standard_normal()) * loading_scale + 0.5 * loading_scale
    prior.loadings = b
    prior.factors = gen.standard_normal((kf, prior.n_features))
    prior.eta = b @ prior.factors + gen.standard_normal((d, prior.n_features))
    return (prior.eta > 0).astype(np.uint8)


def plant_state(
    state: ModelState,
    rng,
    rank_x=None,
    rank_y=None,
    factors_rows=None,
    factors_cat=None,
    factors_real=None,
    weight_floor=0.0,
    loading_scale=1.0,
    noise_sd=None,
):
    """Impose planted structure on a prior draw (generator-side only)."""
    gen = as_generator(rng)
    for reg, rank in ((state.reg_x, rank_x), (state.reg_y, rank_y)):
        if reg is None or rank is None:
            continue
        k = state.hyper.n_features
        reg.active = (np.arange(k) < rank).astype(np.uint8)
        reg.weight = np.maximum(reg.weight, weight_floor) if weight_floor else reg.weight
    for prior, bits_name, n_active in (
        (state.prior_rows, "bits_rows", factors_rows),
        (state.prior_cat, "bits_cat", factors_cat),
        (state.prior_real, "bits_real", factors_real),
    ):
        if prior is None or n_active is None or prior.mode != "correlated":
            continue
        setattr(state, bits_name, _plant_factors(prior, n_active, loading_scale, gen))
    if noise_sd is not None and state.m_real:
        state.sigma_y_sq = float(noise_sd) ** 2
    return state


def draw_data(state: ModelState, rng):
    """Draw (cat matrix, real matrix, beta) from the likelihood given state."""
    gen = as_generator(rng)
    n = state.n_rows
    cat = np.zeros((n, state.m_cat), dtype=np.int64)
    beta = np.zeros((n, state.n_cat_entities))
    if state.m_cat:
        mean = state.beta_mean()
        for j in range(state.m_cat):
            sl = state.cat_slice(j)
            cov = state.noise_cov[j]
            noise = gen.standard_normal((n, cov.dim)) @ cov.chol.T
            block = mean[:, sl] + noise
            beta[:, sl] = block
            cat[:, j] = decode_matrix(block)
    real = np.zeros((n, state.m_real))
    if state.m_real:
        real = state.real_mean() + np.sqrt(state.sigma_y_sq) * gen.standard_normal(
            (n, state.m_real)
        )
    return cat, real, beta


def simulate_dataset(
    n_rows,
    q,
    m_real,
    hyper: HyperParams,
    rng,
    rank_x=None,
    rank_y=None,
    factors_rows=None,
    factors_cat=None,
    factors_real=None,
    weight_floor=0.0,
    loading_scale=1.0,
    noise_sd=None,
):
    """Draw a full dataset (no missing cells) plus its generating state."""
    gen = as_generator(rng)
    q = np.asarray(q, dtype=np.int64)
    state = draw_prior_state(n_rows, q, int(m_real), hyper, gen)
    plant_state(
        state,
        gen,
        rank_x=rank_x,
        rank_y=rank_y,
        factors_rows=factors_rows,
        factors_cat=factors_cat,
        factors_real=factors_real,
        weight_floor=weight_floor,
        loading_scale=loading_scale,
        noise_sd=noise_sd,
    )
    cat, real, beta = draw_data(state, gen)
    ds = RelationalDataset(
        cat=cat,
        q=q,
        real=real,
        cat_missing=np.zeros_like(cat, dtype=bool),
        real_missing=np.zeros_like(real, dtype=bool),
    )
    truth = {
        "rank_x": state.reg_x.effective_rank() if state.reg_x is not None else 0,
        "rank_y": state.reg_y.effective_rank() if state.reg_y is not None else 0,
        "factors_rows": state.prior_rows.active_factor_count(),
        "factors_cat": state.prior_cat.active_factor_count() if state.prior_cat else 0,
        "factors_real": state.prior_real.active_factor_count() if state.prior_real else 0,
        "sigma_y_sq": state.sigma_y_sq,
    }
    return ds, state, truth
