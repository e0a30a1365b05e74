"""Held-out prediction experiments: impute masked entries from a posterior
trace, score them, and compare feature-prior variants across missing-data
fractions.

Categorical cells are scored by exact match; real cells are reported
separately as RMSE on the standardized scale.  A sweep is a pure function of
(dataset, config, seed): splits are keyed by (fraction, repeat) so prior
variants face identical hold-out sets, which is what the paired comparison
needs.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from . import gibbs
from .config import RunConfig
from .data import HeldOutCell, RelationalDataset, hold_out, standardize_real
from .distributions import RngStream, as_generator
from .state import decode_matrix
from .trace import PosteriorTrace

__all__ = [
    "predict_entries",
    "fraction_correct",
    "rmse_real",
    "majority_predictions",
    "EvalReport",
    "missing_fraction_sweep",
]


def predict_entries(trace: PosteriorTrace, cells, rng, n_mc=16):
    """Posterior predictions for a list of cells.

    Real cells get the posterior mean of their bilinear cell mean; categorical
    cells get the category maximizing the posterior-averaged Monte Carlo
    category probabilities (``n_mc`` noise draws per retained sample).
    """
    rng = rng if isinstance(rng, RngStream) else RngStream(int(rng))
    q = np.asarray(trace.meta["q"], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(q - 1)]).astype(np.int64)
    n_rows = int(trace.meta["n_rows"])
    m_real = int(trace.meta["m_real"])

    cat_groups: dict[int, list[int]] = {}
    real_idx = []
    for idx, cell in enumerate(cells):
        if cell.matrix == "cat":
            if not (0 <= cell.row < n_rows and 0 <= cell.col < len(q)):
                raise ValueError(f"categorical cell ({cell.row}, {cell.col}) out of range")
            cat_groups.setdefault(int(cell.col), []).append(idx)
        elif cell.matrix == "real":
            if not (0 <= cell.row < n_rows and 0 <= cell.col < m_real):
                raise ValueError(f"real cell ({cell.row}, {cell.col}) out of range")
            real_idx.append(idx)
        else:
            raise ValueError(f"unknown matrix id {cell.matrix!r}")

    predictions = np.zeros(len(cells))
    n_samples = trace.n_samples
    cat_counts = {j: np.zeros((len(idxs), int(q[j]))) for j, idxs in cat_groups.items()}
    real_acc = np.zeros(len(real_idx))

    for s in range(n_samples):
        if cat_groups:
            mx = trace.regression_matrix(s, "x")
            rows_bits = trace["bits_rows"][s].astype(float)
            cat_bits = trace["bits_cat"][s].astype(float)
            for j, idxs in cat_groups.items():
                sl = slice(int(offsets[j]), int(offsets[j + 1]))
                rows = np.array([cells[i].row for i in idxs])
                mean = (rows_bits[rows] @ mx) @ cat_bits[sl].T
                cov = trace.noise_cov(s, j)
                chol = np.linalg.cholesky(cov)
                gen = rng.substream("predict", s, j).gen
                noise = gen.standard_normal((len(idxs), n_mc, cov.shape[0])) @ chol.T
                draws = mean[:, None, :] + noise
                flat = decode_matrix(draws.reshape(-1, cov.shape[0]))
                decoded = flat.reshape(len(idxs), n_mc)
                for c in range(int(q[j])):
                    cat_counts[j][:, c] += (decoded == c).sum(axis=1)
        if real_idx:
            my = trace.regression_matrix(s, "y")
            rows_bits = trace["bits_rows"][s].astype(float)
            real_bits = trace["bits_real"][s].astype(float)
            rows = np.array([cells[i].row for i in real_idx])
            cols = np.array([cells[i].col for i in real_idx])
            real_acc += np.sum((rows_bits[rows] @ my) * real_bits[cols], axis=1)

    for j, idxs in cat_groups.items():
        best = np.argmax(cat_counts[j], axis=1)
        for pos, idx in enumerate(idxs):
            predictions[idx] = float(best[pos])
    for pos, idx in enumerate(real_idx):
        predictions[idx] = real_acc[pos] / max(n_samples, 1)
    return predictions


def fraction_correct(predictions, cells):
    """Exact-match proportion over categorical cells (real cells excluded)."""
    if len(predictions) != len(cells):
        raise ValueError("prediction/cell length mismatch")
    hits = total = 0
    for pred, cell in zip(predictions, cells):
        if cell.matrix != "cat":
            continue
        total += 1
        hits += int(round(pred)) == int(round(cell.value))
    return hits / total if total else float("nan")


def rmse_real(predictions, cells):
    if len(predictions) != len(cells):
        raise ValueError("prediction/cell length mismatch")
    errs = [
        (pred - cell.value) ** 2 for pred, cell in zip(predictions, cells) if cell.matrix == "real"
    ]
    return float(np.sqrt(np.mean(errs))) if errs else float("nan")


def majority_predictions(train: RelationalDataset, cells):
    """Per-column majority-class baseline for categorical cells."""
    majority = np.zeros(train.m_cat, dtype=np.int64)
    for j in range(train.m_cat):
        obs = ~train.cat_missing[:, j]
        if np.any(obs):
            counts = np.bincount(train.cat[obs, j], minlength=int(train.q[j]))
            majority[j] = int(np.argmax(counts))
    return np.array(
        [float(majority[c.col]) if c.matrix == "cat" else 0.0 for c in cells]
    )


@dataclass
class EvalReport:
    """Per-run rows plus mean/sd aggregates of a hold-out sweep."""

    runs: list = field(default_factory=list)
    fractions: list = field(default_factory=list)
    variants: list = field(default_factory=list)
    repeats: int = 0
    seed: int = 0

    def summary(self):
        rows = []
        for variant in self.variants:
            for fraction in self.fractions:
                accs = [
                    r["accuracy"]
                    for r in self.runs
                    if r["variant"] == variant
                    and r["fraction"] == fraction
                    and r["error"] is None
                ]
                rmses = [
                    r["rmse"]
                    for r in self.runs
                    if r["variant"] == variant
                    and r["fraction"] == fraction
                    and r["error"] is None
                ]
                accs_finite = [a for a in accs if np.isfinite(a)]
                rmses_finite = [x for x in rmses if np.isfinite(x)]
                rows.append(
                    {
                        "variant": variant,
                        "fraction": fraction,
                        "n_runs": len(accs),
                        "accuracy_mean": float(np.mean(accs_finite)) if accs_finite else None,
                        "accuracy_sd": float(np.std(accs_finite)) if accs_finite else None,
                        "rmse_mean": float(np.mean(rmses_finite)) if rmses_finite else None,
                        "rmse_sd": float(np.std(rmses_finite)) if rmses_finite else None,
                    }
                )
        return rows

    def to_json(self, path, include_timing=False):
        runs = []
        for r in self.runs:
            row = dict(r)
            if not include_timing:
                row.pop("runtime", None)
            runs.append(row)
        payload = {
            "seed": self.seed,
            "fractions": self.fractions,
            "variants": self.variants,
            "repeats": self.repeats,
            "summary": self.summary(),
            "runs": runs,
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def to_csv(self, path):
        frame = pd.DataFrame(
            [{k: v for k, v in r.items() if k != "runtime"} for r in self.runs]
        )
        frame.to_csv(path, index=False)


def _sweep_unit(payload):
    """One (fraction, repeat, variant) cell of the sweep; top-level for pickling."""
    ds, config_dict, seed, f_idx, fraction, rep, variant = payload
    config = RunConfig.from_dict(config_dict).replace(prior_mode=variant)
    root = RngStream(seed)
    started = time.perf_counter()
    out = {
        "fraction": fraction,
        "repeat": rep,
        "variant": variant,
        "accuracy": float("nan"),
        "rmse": float("nan"),
        "majority_accuracy": float("nan"),
        "n_cat": 0,
        "n_real": 0,
        "error": None,
        "runtime": 0.0,
    }
    try:
        train, heldout = hold_out(ds, fraction, root.substream("split", f_idx, rep).gen)
        if config.standardize and train.m_real:
            train, std = standardize_real(train)
            heldout = [
                HeldOutCell(c.matrix, c.row, c.col, std.apply_cell(c.col, c.value))
                if c.matrix == "real"
                else c
                for c in heldout
            ]
        trace, _ = gibbs.run(train, config, rng=root.substream("fit", f_idx, rep, variant))
        preds = predict_entries(
            trace,
            heldout,
            root.substream("predict", f_idx, rep, variant),
            n_mc=config.predict_mc,
        )
        out["accuracy"] = fraction_correct(preds, heldout)
        out["rmse"] = rmse_real(preds, heldout)
        out["majority_accuracy"] = fraction_correct(majority_predictions(train, heldout), heldout)
        out["n_cat"] = sum(1 for c in heldout if c.matrix == "cat")
        out["n_real"] = sum(1 for c in heldout if c.matrix == "real")
    except Exception as exc:  # recorded, not fatal to the sweep
        out["error"] = f"{type(exc).__name__}: {exc}"
    out["runtime"] = time.perf_counter() - started
    return out


def missing_fraction_sweep(
    ds: RelationalDataset,
    fractions,
    repeats,
    variants,
    config: RunConfig,
    seed,
    workers=1,
) -> EvalReport:
    """Hold-out sweep over missing fractions, repeats, and prior variants.

    Deterministic given (dataset, config, seed) at any worker count: each
    cell's split/fit/predict randomness is keyed by its indices alone.
    """
    fractions = [float(f) for f in fractions]
    for f in fractions:
        if not 0 < f < 1:
            raise ValueError(f"fractions must lie in (0, 1), got {f}")
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    for v in variants:
        if v not in ("correlated", "independent"):
            raise ValueError(f"unknown variant {v!r}")

    jobs = [
        (ds, config.to_dict(), int(seed), f_idx, fraction, rep, variant)
        for f_idx, fraction in enumerate(fractions)
        for rep in range(repeats)
        for variant in variants
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_unit, jobs))
    else:
        results = [_sweep_unit(job) for job in jobs]
    return EvalReport(
        runs=results,
        fractions=fractions,
        variants=list(variants),
        repeats=int(repeats),
        seed=int(seed),
    )
