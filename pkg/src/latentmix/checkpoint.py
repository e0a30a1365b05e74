"""Checkpoint files: full model state plus the partial trace of a run.

A checkpoint is a single ``.npz`` with a JSON header (version tag, iteration
counter, run metadata).  Resuming reproduces the uninterrupted trajectory
bit for bit because sweep randomness is keyed by (seed, sweep index), both of
which the checkpoint carries via the config echo.
"""

from __future__ import annotations

import json

import numpy as np

from .state import HyperParams, ModelState

_FORMAT_VERSION = 1

__all__ = ["save_checkpoint", "load_checkpoint", "state_arrays", "restore_state"]


def state_arrays(state: ModelState) -> dict:
    """Flatten a ModelState into named arrays."""
    out = {
        "state.bits_rows": state.bits_rows,
        "state.bits_cat": state.bits_cat,
        "state.bits_real": state.bits_real,
        "state.beta": state.beta,
        "state.sigma_y_sq": np.array(state.sigma_y_sq),
    }
    for side, reg in (("x", state.reg_x), ("y", state.reg_y)):
        if reg is None:
            continue
        out[f"state.reg_{side}.weight"] = reg.weight
        out[f"state.reg_{side}.active"] = reg.active
        out[f"state.reg_{side}.u"] = reg.u
        out[f"state.reg_{side}.v"] = reg.v
        out[f"state.reg_{side}.include_prob"] = np.array(reg.include_prob)
        out[f"state.reg_{side}.scale_sq"] = np.array(reg.scale_sq)
    for j, cov in enumerate(state.noise_cov):
        if cov.extended is not None:
            out[f"state.noise_cov_{j}"] = cov.extended
    for name, prior in (
        ("rows", state.prior_rows),
        ("cat", state.prior_cat),
        ("real", state.prior_real),
    ):
        if prior is None:
            continue
        if prior.mode == "correlated":
            out[f"state.prior_{name}.loadings"] = prior.loadings
            out[f"state.prior_{name}.factors"] = prior.factors
            out[f"state.prior_{name}.eta"] = prior.eta
            out[f"state.prior_{name}.slab_var"] = prior.slab_var
            out[f"state.prior_{name}.include_prob"] = prior.include_prob
        else:
            out[f"state.prior_{name}.feat_prob"] = prior.feat_prob
    return out


def restore_state(arrays: dict, n_rows, q, m_real, hyper: HyperParams) -> ModelState:
    state = ModelState(n_rows, q, m_real, hyper)
    state.bits_rows = arrays["state.bits_rows"].astype(np.uint8)
    state.bits_cat = arrays["state.bits_cat"].astype(np.uint8)
    state.bits_real = arrays["state.bits_real"].astype(np.uint8)
    state.beta = arrays["state.beta"].astype(np.float64)
    state.sigma_y_sq = float(arrays["state.sigma_y_sq"])
    for side, reg in (("x", state.reg_x), ("y", state.reg_y)):
        if reg is None:
            continue
        reg.weight = arrays[f"state.reg_{side}.weight"].astype(np.float64)
        reg.active = arrays[f"state.reg_{side}.active"].astype(np.uint8)
        reg.u = arrays[f"state.reg_{side}.u"].astype(np.float64)
        reg.v = arrays[f"state.reg_{side}.v"].astype(np.float64)
        reg.include_prob = float(arrays[f"state.reg_{side}.include_prob"])
        reg.scale_sq = float(arrays[f"state.reg_{side}.scale_sq"])
    for j, cov in enumerate(state.noise_cov):
        key = f"state.noise_cov_{j}"
        if key in arrays:
            cov.set_extended(arrays[key].astype(np.float64))
    for name, prior in (
        ("rows", state.prior_rows),
        ("cat", state.prior_cat),
        ("real", state.prior_real),
    ):
        if prior is None:
            continue
        if prior.mode == "correlated":
            prior.loadings = arrays[f"state.prior_{name}.loadings"].astype(np.float64)
            prior.factors = arrays[f"state.prior_{name}.factors"].astype(np.float64)
            prior.eta = arrays[f"state.prior_{name}.eta"].astype(np.float64)
            prior.slab_var = arrays[f"state.prior_{name}.slab_var"].astype(np.float64)
            prior.include_prob = arrays[f"state.prior_{name}.include_prob"].astype(np.float64)
        else:
            prior.feat_prob = arrays[f"state.prior_{name}.feat_prob"].astype(np.float64)
    return state


def save_checkpoint(path, state: ModelState, next_iter, trace_arrays, filled, meta):
    header = json.dumps(
        {
            "format_version": _FORMAT_VERSION,
            "next_iter": int(next_iter),
            "filled": int(filled),
            "meta": meta,
        },
        sort_keys=True,
    )
    payload = {"__header__": np.frombuffer(header.encode(), dtype=np.uint8)}
    payload.update(state_arrays(state))
    for name, arr in trace_arrays.items():
        payload[f"trace.{name}"] = arr
    np.savez_compressed(path, **payload)


def load_checkpoint(path, ds, hyper: HyperParams):
    """Return (state, next_iter, trace_arrays, filled) for resuming."""
    with np.load(path, allow_pickle=False) as payload:
        header = json.loads(payload["__header__"].tobytes().decode())
        if header.get("format_version") != _FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format: {header.get('format_version')}")
        arrays = {name: payload[name] for name in payload.files if name != "__header__"}
    state = restore_state(arrays, ds.n_rows, ds.q, ds.m_real, hyper)
    trace_arrays = {
        name[len("trace.") :]: arr.copy()
        for name, arr in arrays.items()
        if name.startswith("trace.")
    }
    return state, header["next_iter"], trace_arrays, header["filled"]
