"""Posterior summary operations over traces."""

import numpy as np
import pytest

from latentmix import analysis, gibbs
from latentmix.config import RunConfig
from latentmix.distributions import RngStream
from latentmix.simulate import simulate_dataset
from latentmix.state import HyperParams
from latentmix.trace import PosteriorTrace


def tiny_trace(seed=0, n=6, q=(2, 2), m_real=2, mode="correlated"):
    hyper = HyperParams(
        n_features=3, n_factors_rows=2, n_factors_cat=2, n_factors_real=2, prior_mode=mode
    )
    ds, _, _ = simulate_dataset(n, list(q), m_real, hyper, RngStream(seed))
    cfg = RunConfig(
        n_features=3,
        n_factors_rows=2,
        n_factors_cat=2,
        n_factors_real=2,
        total_iters=40,
        burn_in=10,
        thin=3,
        seed=seed,
        standardize=False,
        prior_mode=mode,
    )
    trace, _ = gibbs.run(ds, cfg)
    return trace


def manual_trace(log_joints, loadings=None, n_entities=3, k=2, kf=2):
    """Hand-built minimal trace for deterministic unit checks."""
    s = len(log_joints)
    arrays = {
        "log_joint": np.array(log_joints, dtype=float),
        "bits_rows": np.zeros((s, n_entities, k), dtype=np.uint8),
        "bits_cat": np.zeros((s, 2, k), dtype=np.uint8),
        "bits_real": np.zeros((s, 2, k), dtype=np.uint8),
        "sigma_y_sq": np.ones(s),
        "loadings_rows": np.zeros((s, n_entities, kf)) if loadings is None else loadings,
        "loadings_cat": np.zeros((s, 2, kf)),
        "loadings_real": np.zeros((s, 2, kf)),
    }
    for side in ("x", "y"):
        arrays[f"weight_{side}"] = np.ones((s, k))
        arrays[f"active_{side}"] = np.ones((s, k), dtype=np.uint8)
        arrays[f"u_{side}"] = np.zeros((s, k, k))
        arrays[f"v_{side}"] = np.zeros((s, k, k))
    meta = {
        "q": [2, 2],
        "n_rows": n_entities,
        "m_real": 2,
        "row_labels": [f"r{i}" for i in range(n_entities)],
        "cat_entity_labels": ["c0:1", "c1:1"],
        "real_labels": ["y0", "y1"],
    }
    return PosteriorTrace(arrays, meta)


class TestMapSample:
    def test_single_sample(self):
        assert analysis.map_sample(manual_trace([-5.0])) == 0

    def test_argmax(self):
        assert analysis.map_sample(manual_trace([-5.0, -3.0, -4.0])) == 1

    def test_ties_smallest_index(self):
        assert analysis.map_sample(manual_trace([-3.0, -3.0, -7.0])) == 0

    def test_empty_trace_rejected(self):
        with pytest.raises(ValueError):
            analysis.map_sample(manual_trace([]))


class TestEntityCorrelation:
    def test_zero_loadings_identity(self):
        trace = manual_trace([-1.0])
        np.testing.assert_array_equal(
            analysis.entity_correlation(trace, "rows", "map"), np.eye(3)
        )

    def test_identical_loading_rows_closed_form(self):
        loadings = np.zeros((1, 3, 2))
        loadings[0, 0] = [0.8, -0.4]
        loadings[0, 1] = [0.8, -0.4]
        trace = manual_trace([-1.0], loadings=loadings)
        corr = analysis.entity_correlation(trace, "rows", "map")
        norm_sq = 0.8**2 + 0.4**2
        assert np.isclose(corr[0, 1], norm_sq / (norm_sq + 1.0), atol=1e-12)

    def test_posterior_mean_symmetric_unit_diag(self):
        trace = tiny_trace(1)
        corr = analysis.entity_correlation(trace, "rows", "posterior-mean")
        np.testing.assert_allclose(corr, corr.T, atol=1e-12)
        np.testing.assert_allclose(np.diag(corr), 1.0, atol=1e-12)
        assert np.all(np.abs(corr) <= 1 + 1e-12)

    def test_map_source_equals_stored_loadings(self):
        trace = tiny_trace(2)
        idx = analysis.map_sample(trace)
        b = trace["loadings_rows"][idx]
        cov = b @ b.T + np.eye(b.shape[0])
        expected = cov / np.sqrt(np.outer(np.diag(cov), np.diag(cov)))
        np.fill_diagonal(expected, 1.0)
        np.testing.assert_allclose(
            analysis.entity_correlation(trace, "rows", "map"), expected, atol=1e-12
        )

    def test_empirical_source(self):
        trace = tiny_trace(3)
        corr = analysis.entity_correlation(trace, "rows", "empirical")
        np.testing.assert_allclose(np.diag(corr), 1.0, atol=1e-12)
        np.testing.assert_allclose(corr, corr.T, atol=1e-12)

    def test_independent_mode_identity(self):
        trace = tiny_trace(4, mode="independent")
        np.testing.assert_array_equal(
            analysis.entity_correlation(trace, "rows", "map"), np.eye(6)
        )


class TestHistograms:
    def test_all_zero_bits_point_mass_at_zero(self):
        trace = manual_trace([-1.0, -2.0])
        hist = analysis.feature_count_posterior(trace, "rows")
        assert hist[0] == 1.0 and hist.sum() == 1.0

    def test_counts_nonempty_columns(self):
        trace = manual_trace([-1.0])
        trace.arrays["bits_rows"][0, 0, 0] = 1
        trace.arrays["bits_rows"][0, 2, 1] = 1
        hist = analysis.feature_count_posterior(trace, "rows")
        assert hist[2] == 1.0

    def test_histogram_sums_to_one(self):
        trace = tiny_trace(5)
        for family in ("rows", "cat-cols", "real-cols"):
            hist = analysis.feature_count_posterior(trace, family)
            assert abs(hist.sum() - 1.0) < 1e-12
        for side in ("x", "y"):
            hist = analysis.rank_posterior(trace, side)
            assert abs(hist.sum() - 1.0) < 1e-12

    def test_rank_point_mass_when_all_active(self):
        trace = manual_trace([-1.0, -1.5])
        hist = analysis.rank_posterior(trace, "x")
        assert hist[2] == 1.0

    def test_min_fraction_threshold(self):
        trace = manual_trace([-1.0])
        trace.arrays["bits_rows"][0, 0, 0] = 1  # one of three entities
        strict = analysis.feature_count_posterior(trace, "rows", min_fraction=0.5)
        loose = analysis.feature_count_posterior(trace, "rows")
        assert strict[0] == 1.0 and loose[1] == 1.0


class TestLoadings:
    def test_zero_column_bits_zero_loadings(self):
        trace = manual_trace([-1.0])
        loadings = analysis.reconstruct_loadings(trace, 0)
        np.testing.assert_array_equal(loadings, np.zeros((2, 2)))

    def test_bilinear_identity(self):
        trace = tiny_trace(6)
        for s in range(trace.n_samples):
            rows, cols = analysis.feature_coordinates(trace, s, side="y")
            my = trace.regression_matrix(s, "y")
            mean = trace["bits_rows"][s].astype(float) @ my @ trace["bits_real"][s].astype(float).T
            np.testing.assert_allclose(rows @ cols.T, mean, atol=1e-10)

    def test_output_width_is_effective_rank(self):
        trace = tiny_trace(7)
        s = analysis.map_sample(trace)
        loadings = analysis.reconstruct_loadings(trace, s)
        assert loadings.shape == (2, int(trace["active_y"][s].sum()))


class TestReorder:
    def test_identity_correlation_input_order(self):
        perm = analysis.reorder_indices(np.eye(5))
        np.testing.assert_array_equal(perm, np.arange(5))

    def test_block_diagonal_blocks_contiguous(self):
        corr = np.eye(4)
        corr[0, 2] = corr[2, 0] = 0.9
        corr[1, 3] = corr[3, 1] = 0.9
        perm = list(analysis.reorder_indices(corr))
        pos = {e: perm.index(e) for e in range(4)}
        assert abs(pos[0] - pos[2]) == 1
        assert abs(pos[1] - pos[3]) == 1

    def test_output_is_permutation(self):
        gen = RngStream(8).gen
        a = gen.standard_normal((6, 3))
        cov = a @ a.T + np.eye(6)
        corr = cov / np.sqrt(np.outer(np.diag(cov), np.diag(cov)))
        np.fill_diagonal(corr, 1.0)
        perm = analysis.reorder_indices(corr)
        assert sorted(perm) == list(range(6))
