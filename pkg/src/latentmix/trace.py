"""Container for thinned posterior samples, with npz persistence.

A trace stores, per retained sample, everything needed to rebuild cell-mean
predictions and correlation summaries: the three binary feature matrices,
both low-rank regressions (weights, indicators, left/right vectors), factor
loadings per family, noise parameters, and the log joint density.
"""

from __future__ import annotations

import json

import numpy as np

__all__ = ["PosteriorTrace"]

_FORMAT_VERSION = 1


class PosteriorTrace:
    """Stacked arrays over retained samples plus a config echo.

    ``arrays`` maps field names to arrays whose leading axis indexes samples.
    Multi-category noise covariances are stored as ``noise_cov_{j}`` keyed by
    attribute index.
    """

    def __init__(self, arrays: dict, meta: dict):
        self.arrays = arrays
        self.meta = meta
        n = arrays["log_joint"].shape[0]
        for name, arr in arrays.items():
            if arr.shape[0] != n:
                raise ValueError(f"trace field {name} has inconsistent sample count")
        if not np.all(np.isfinite(arrays["log_joint"])):
            raise ValueError("trace contains non-finite log joint values")

    @property
    def n_samples(self) -> int:
        return int(self.arrays["log_joint"].shape[0])

    @property
    def log_joint(self) -> np.ndarray:
        return self.arrays["log_joint"]

    def __getitem__(self, name):
        return self.arrays[name]

    def has(self, name) -> bool:
        return name in self.arrays

    def noise_cov(self, s, j):
        """Restricted noise covariance of attribute j at sample s."""
        key = f"noise_cov_{j}"
        if key in self.arrays:
            return self.arrays[key][s]
        return np.ones((1, 1))

    def regression_matrix(self, s, side):
        """Assembled low-rank regression matrix of one side at sample s."""
        w = self.arrays[f"weight_{side}"][s] * self.arrays[f"active_{side}"][s]
        u = self.arrays[f"u_{side}"][s]
        v = self.arrays[f"v_{side}"][s]
        return (u * w[:, None]).T @ v

    def save(self, path):
        header = json.dumps(
            {"format_version": _FORMAT_VERSION, "meta": self.meta}, sort_keys=True
        )
        np.savez_compressed(path, __header__=np.frombuffer(header.encode(), dtype=np.uint8),
                            **self.arrays)

    @classmethod
    def load(cls, path):
        with np.load(path, allow_pickle=False) as payload:
            names = [n for n in payload.files if n != "__header__"]
            arrays = {n: payload[n] for n in names}
            header = json.loads(payload["__header__"].tobytes().decode())
        if header.get("format_version") != _FORMAT_VERSION:
            raise ValueError(f"unsupported trace format: {header.get('format_version')}")
        return cls(arrays, header["meta"])
