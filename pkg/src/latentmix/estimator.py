"""Scikit-learn style estimator wrapping the full fit/predict pipeline."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import analysis, gibbs
from .cluster import agglomerate, dissimilarity
from .config import RunConfig
from .data import RelationalDataset, standardize_real
from .distributions import RngStream
from .evaluate import fraction_correct, predict_entries

__all__ = ["LatentFeatureModel"]


class LatentFeatureModel(BaseEstimator):
    """Latent binary-feature model for mixed categorical/real matrices.

    ``fit`` runs the MCMC sampler on a :class:`RelationalDataset` and stores
    the retained-sample trace; ``predict`` imputes cells from the posterior.
    Hyperparameters mirror :class:`latentmix.config.RunConfig`, so the
    estimator composes with scikit-learn's ``get_params``/``set_params``
    and ``clone``.
    """

    def __init__(
        self,
        n_features=20,
        n_factors_rows=6,
        n_factors_cat=6,
        n_factors_real=6,
        slab_c=1.0,
        slab_d=1.0,
        sigma_lambda_sq=1.0,
        sample_lambda_scale=False,
        wishart_df=8.0,
        wishart_scale=1.0,
        noise_shape=1.0,
        noise_rate=1.0,
        prior_mode="correlated",
        ibp_alpha=1.0,
        total_iters=2000,
        burn_in=500,
        thin=3,
        seed=0,
        standardize=True,
        predict_mc=16,
    ):
        self.n_features = n_features
        self.n_factors_rows = n_factors_rows
        self.n_factors_cat = n_factors_cat
        self.n_factors_real = n_factors_real
        self.slab_c = slab_c
        self.slab_d = slab_d
        self.sigma_lambda_sq = sigma_lambda_sq
        self.sample_lambda_scale = sample_lambda_scale
        self.wishart_df = wishart_df
        self.wishart_scale = wishart_scale
        self.noise_shape = noise_shape
        self.noise_rate = noise_rate
        self.prior_mode = prior_mode
        self.ibp_alpha = ibp_alpha
        self.total_iters = total_iters
        self.burn_in = burn_in
        self.thin = thin
        self.seed = seed
        self.standardize = standardize
        self.predict_mc = predict_mc

    def _config(self) -> RunConfig:
        return RunConfig(**self.get_params()).validate()

    def fit(self, dataset: RelationalDataset, y=None):
        """Run the sampler; returns self with ``trace_`` and ``diagnostics_``."""
        if not isinstance(dataset, RelationalDataset):
            raise TypeError("fit expects a RelationalDataset")
        config = self._config()
        self.standardization_ = None
        if config.standardize and dataset.m_real:
            dataset, self.standardization_ = standardize_real(dataset)
        self.trace_, self.diagnostics_ = gibbs.run(dataset, config)
        return self

    def _check_fitted(self):
        if not hasattr(self, "trace_"):
            raise NotFittedError("call fit before using this estimator")

    def predict(self, cells):
        """Impute a list of :class:`latentmix.data.HeldOutCell` positions."""
        self._check_fitted()
        rng = RngStream(self._config().seed).substream("estimator-predict")
        return predict_entries(self.trace_, cells, rng, n_mc=self.predict_mc)

    def score(self, cells, y=None):
        """Exact-match accuracy over categorical cells (values taken from the
        cells themselves)."""
        return fraction_correct(self.predict(cells), cells)

    # -- posterior summaries ---------------------------------------------------

    def map_sample(self):
        self._check_fitted()
        return analysis.map_sample(self.trace_)

    def correlation(self, family="rows", source="map"):
        self._check_fitted()
        return analysis.entity_correlation(self.trace_, family, source)

    def feature_histogram(self, family="rows", min_fraction=0.0):
        self._check_fitted()
        return analysis.feature_count_posterior(self.trace_, family, min_fraction)

    def rank_histogram(self, side="x"):
        self._check_fitted()
        return analysis.rank_posterior(self.trace_, side)

    def loadings(self, sample=None):
        self._check_fitted()
        s = analysis.map_sample(self.trace_) if sample is None else sample
        return analysis.reconstruct_loadings(self.trace_, s)

    def dendrogram(self, family="rows", source="map", linkage="average"):
        self._check_fitted()
        corr = self.correlation(family, source)
        labels = analysis.family_labels(self.trace_, family) or None
        return agglomerate(dissimilarity(corr), labels=labels, linkage=linkage)
