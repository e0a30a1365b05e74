"""Posterior summaries: correlation matrices, feature/rank histograms,
factor-loading reconstructions, MAP selection, and matrix reordering."""

from __future__ import annotations

import numpy as np

from .cluster import agglomerate, dissimilarity, leaf_order
from .trace import PosteriorTrace

__all__ = [
    "FAMILIES",
    "map_sample",
    "entity_correlation",
    "feature_count_posterior",
    "rank_posterior",
    "reconstruct_loadings",
    "feature_coordinates",
    "reorder_indices",
    "family_labels",
]

# family name -> (bits field, loadings field, meta label key)
FAMILIES = {
    "rows": ("bits_rows", "loadings_rows", "row_labels"),
    "cat-cols": ("bits_cat", "loadings_cat", "cat_entity_labels"),
    "real-cols": ("bits_real", "loadings_real", "real_labels"),
}


def _family_fields(family):
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; expected one of {sorted(FAMILIES)}")
    return FAMILIES[family]


def family_labels(trace: PosteriorTrace, family):
    _, _, key = _family_fields(family)
    return list(trace.meta.get(key, []))


def map_sample(trace: PosteriorTrace) -> int:
    """Index of the retained sample with maximal log joint (ties: smallest)."""
    if trace.n_samples == 0:
        raise ValueError("empty trace")
    return int(np.argmax(trace.log_joint))


def _implied_correlation(loadings):
    cov = loadings @ loadings.T + np.eye(loadings.shape[0])
    scale = np.sqrt(np.diag(cov))
    corr = cov / np.outer(scale, scale)
    np.fill_diagonal(corr, 1.0)
    return corr


def entity_correlation(trace: PosteriorTrace, family, source="map"):
    """Correlation matrix over one entity family.

    ``source``: "map" evaluates the factor model's implied correlation at the
    MAP sample; "posterior-mean" averages it over retained samples and
    renormalizes to a unit diagonal; "empirical" is the Pearson correlation
    of the MAP binary feature vectors.
    """
    bits_field, load_field, _ = _family_fields(family)
    n_entities = trace[bits_field].shape[1]
    if n_entities == 0:
        raise ValueError(f"family {family!r} has no entities")
    loadings = trace[load_field]

    if source == "map":
        if loadings.shape[2] == 0:
            return np.eye(n_entities)
        return _implied_correlation(loadings[map_sample(trace)])
    if source == "posterior-mean":
        if loadings.shape[2] == 0:
            return np.eye(n_entities)
        acc = np.zeros((n_entities, n_entities))
        for s in range(trace.n_samples):
            acc += _implied_correlation(loadings[s])
        acc /= trace.n_samples
        scale = np.sqrt(np.diag(acc))
        corr = acc / np.outer(scale, scale)
        np.fill_diagonal(corr, 1.0)
        return corr
    if source == "empirical":
        bits = trace[bits_field][map_sample(trace)].astype(float)
        sd = bits.std(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            corr = np.corrcoef(bits)
        corr = np.where(np.isfinite(corr), corr, 0.0)
        np.fill_diagonal(corr, 1.0)
        return corr
    raise ValueError(f"unknown correlation source {source!r}")


def feature_count_posterior(trace: PosteriorTrace, family, min_fraction=0.0):
    """Histogram (probabilities indexed by count 0..K) of the number of
    features used by at least one entity (or a ``min_fraction`` of them)."""
    bits_field, _, _ = _family_fields(family)
    bits = trace[bits_field]
    n_samples, n_entities, k = bits.shape
    if n_entities == 0:
        raise ValueError(f"family {family!r} has no entities")
    threshold = max(1, int(np.ceil(min_fraction * n_entities))) if min_fraction else 1
    counts = (bits.sum(axis=1) >= threshold).sum(axis=1)
    hist = np.bincount(counts, minlength=k + 1).astype(float)
    return hist / hist.sum()


def rank_posterior(trace: PosteriorTrace, side):
    """Histogram of the number of active rank-one terms on one side."""
    if side not in ("x", "y"):
        raise ValueError("side must be 'x' or 'y'")
    active = trace[f"active_{side}"]
    if active.shape[1] == 0:
        raise ValueError(f"side {side!r} absent from this fit")
    counts = active.sum(axis=1)
    hist = np.bincount(counts, minlength=active.shape[1] + 1).astype(float)
    return hist / hist.sum()


def feature_coordinates(trace: PosteriorTrace, s, side="y"):
    """Active-term coordinates sqrt(weight) * <bits, direction> for both the
    row entities and that side's column entities at sample s.

    The rowwise dot product of the two outputs reproduces the bilinear cell
    means exactly.
    """
    active = trace[f"active_{side}"][s].astype(bool)
    w = np.sqrt(trace[f"weight_{side}"][s][active])
    u = trace[f"u_{side}"][s][active]
    v = trace[f"v_{side}"][s][active]
    rows = trace["bits_rows"][s].astype(float)
    cols = trace["bits_cat" if side == "x" else "bits_real"][s].astype(float)
    row_coords = (rows @ u.T) * w[None, :]
    col_coords = (cols @ v.T) * w[None, :]
    return row_coords, col_coords


def reconstruct_loadings(trace: PosteriorTrace, s):
    """Per-real-column loading vectors over the active real-side terms."""
    _, col_coords = feature_coordinates(trace, s, side="y")
    return col_coords


def reorder_indices(corr, linkage="average"):
    """Permutation ordering entities by dendrogram leaf order."""
    dend = agglomerate(dissimilarity(corr), linkage=linkage)
    return np.array(leaf_order(dend), dtype=np.int64)
