"""Joint-distribution testing of the sampler.

Two simulators target the same joint over (parameters, data): the
marginal-conditional simulator draws parameters from the prior and data from
the likelihood, independently each round; the successive-conditional
simulator alternates one Gibbs sweep on parameters given data with a fresh
data draw given parameters.  If every conditional update is correct, any
scalar statistic has the same distribution under both, and the z-scores
comparing their means (with an autocorrelation-adjusted standard error on
the chain side) stay small.
"""

from __future__ import annotations

import numpy as np

from .data import RelationalDataset
from .distributions import RngStream
from .gibbs import GibbsSampler, default_blocks
from .simulate import draw_data, draw_prior_state
from .state import HyperParams

__all__ = ["scalar_statistics", "forward_samples", "chain_samples", "zscores", "effective_sample_size"]


def _dataset_from_draw(cat, real, q):
    return RelationalDataset(
        cat=cat,
        q=q,
        real=real,
        cat_missing=np.zeros_like(cat, dtype=bool),
        real_missing=np.zeros_like(real, dtype=bool),
    )


def scalar_statistics(state, ds) -> dict:
    """A broad set of scalar functions of (parameters, data).

    Heavy-tailed quantities also appear as bounded indicators so their
    comparisons have finite variance.
    """
    stats = {
        "bits_rows_mean": float(state.bits_rows.mean()),
        "rows_factor_ssq": float(np.sum(state.prior_rows.loadings**2))
        if state.prior_rows.mode == "correlated"
        else float(state.prior_rows.feat_prob.mean()),
    }
    if state.prior_rows.mode == "correlated":
        stats["rows_loadings_nonzero"] = float(np.mean(state.prior_rows.loadings != 0.0))
        stats["rows_slab_var_lt1"] = float(np.mean(state.prior_rows.slab_var < 1.0))
        stats["rows_include_prob"] = float(state.prior_rows.include_prob.mean())
        stats["rows_factor_mean"] = float(state.prior_rows.factors.mean())
        stats["rows_eta_mean"] = float(state.prior_rows.eta.mean())
        stats["rows_eta_sq"] = float(np.mean(state.prior_rows.eta**2))
    if state.m_cat:
        reg = state.reg_x
        stats.update(
            {
                "x_weight_mean": float(reg.weight.mean()),
                "x_weight_lt1": float(np.mean(reg.weight < 1.0)),
                "x_rank": float(reg.active.sum()),
                "x_include_prob": float(reg.include_prob),
                "x_u_mean": float(reg.u.mean()),
                "x_u_sq": float(np.mean(reg.u**2)),
                "x_v_sq": float(np.mean(reg.v**2)),
                "bits_cat_mean": float(state.bits_cat.mean()),
                "beta_mean": float(state.beta.mean()),
                "beta_abs_lt1": float(np.mean(np.abs(state.beta) < 1.0)),
                "cat_base_freq": float(np.mean(ds.cat == 0)),
            }
        )
        for j, cov in enumerate(state.noise_cov):
            if cov.dim > 1:
                stats[f"sigma_{j}_offdiag"] = float(cov.cov[0, 1])
                stats[f"sigma_{j}_lastvar_lt1"] = float(cov.cov[-1, -1] < 1.0)
                stats[f"sigma_{j}_ext_trace_lt"] = float(
                    np.trace(cov.extended) < state.hyper.wishart_df * cov.dim
                )
    if state.m_real:
        reg = state.reg_y
        stats.update(
            {
                "y_weight_mean": float(reg.weight.mean()),
                "y_weight_lt1": float(np.mean(reg.weight < 1.0)),
                "y_rank": float(reg.active.sum()),
                "y_include_prob": float(reg.include_prob),
                "y_v_sq": float(np.mean(reg.v**2)),
                "bits_real_mean": float(state.bits_real.mean()),
                "sigma_y_lt1": float(state.sigma_y_sq < 1.0),
                "sigma_y_lt_half": float(state.sigma_y_sq < 0.5),
                "real_mean": float(ds.real.mean()),
                "real_abs_lt1": float(np.mean(np.abs(ds.real) < 1.0)),
            }
        )
        if state.hyper.sample_lambda_scale:
            stats["y_scale_lt1"] = float(reg.scale_sq < 1.0)
    return stats


def forward_samples(n_rows, q, m_real, hyper: HyperParams, n, seed):
    """Independent (prior, likelihood) draws of the statistics."""
    root = RngStream(seed)
    rows = []
    q = np.asarray(q, dtype=np.int64)
    for t in range(n):
        rng = root.substream("forward", t)
        state = draw_prior_state(n_rows, q, m_real, hyper, rng.substream("state"))
        cat, real, beta = draw_data(state, rng.substream("data"))
        state.beta = beta
        rows.append(scalar_statistics(state, _dataset_from_draw(cat, real, q)))
    return rows


def chain_samples(n_rows, q, m_real, hyper: HyperParams, n, seed, sweeps_per_draw=1):
    """Successive-conditional draws: sweep on parameters, then refresh data."""
    root = RngStream(seed)
    q = np.asarray(q, dtype=np.int64)
    state = draw_prior_state(n_rows, q, m_real, hyper, root.substream("init-state"))
    cat, real, beta = draw_data(state, root.substream("init-data"))
    state.beta = beta
    ds = _dataset_from_draw(cat, real, q)
    blocks = default_blocks(ds.m_cat, ds.m_real, bool(np.any(q > 2)))
    rows = []
    for t in range(n):
        rng = root.substream("chain", t)
        sampler = GibbsSampler(state, ds)
        for s in range(sweeps_per_draw):
            sampler.sweep(rng.substream("sweep", s), blocks)
        cat, real, beta = draw_data(state, rng.substream("data"))
        state.beta = beta
        ds = _dataset_from_draw(cat, real, q)
        rows.append(scalar_statistics(state, ds))
    return rows


def effective_sample_size(x) -> float:
    """ESS via the initial positive sequence estimator on autocovariances."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 4 or np.var(x) == 0:
        return float(n)
    centered = x - x.mean()
    acov = np.correlate(centered, centered, mode="full")[n - 1 :] / n
    rho = acov / acov[0]
    # sum consecutive pairs while they stay positive
    tau = 1.0
    for lag in range(1, n - 2, 2):
        pair = rho[lag] + rho[lag + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
    return float(max(1.0, n / tau))


def _batch_means_se(x, n_batches=25):
    """Autocorrelation-robust standard error of a chain mean."""
    x = np.asarray(x, dtype=float)
    size = len(x) // n_batches
    if size < 2:
        return float(x.std(ddof=1) / np.sqrt(len(x)))
    means = x[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(n_batches))


def zscores(forward_rows, chain_rows) -> dict:
    """Per-statistic z-scores between the two simulators.

    The forward side is iid; the chain side uses a batch-means standard
    error to absorb autocorrelation.
    """
    names = sorted(set(forward_rows[0]) & set(chain_rows[0]))
    out = {}
    for name in names:
        f = np.array([r[name] for r in forward_rows], dtype=float)
        c = np.array([r[name] for r in chain_rows], dtype=float)
        denom = np.sqrt(f.var(ddof=1) / len(f) + _batch_means_se(c) ** 2)
        if denom == 0:
            out[name] = 0.0 if f.mean() == c.mean() else np.inf
        else:
            out[name] = float((f.mean() - c.mean()) / denom)
    return out
