"""Run configuration: a versioned JSON schema shared by the CLI and library.

Flags override file values; the canonical hash of the resolved config is
recorded in every output manifest so runs are reproducible end to end.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .state import HyperParams

__all__ = ["ConfigError", "RunConfig", "load_config", "config_hash"]

CONFIG_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration value or file."""


@dataclass
class RunConfig:
    """Everything a fit needs besides the dataset itself."""

    n_features: int = 20
    n_factors_rows: int = 6
    n_factors_cat: int = 6
    n_factors_real: int = 6
    slab_c: float = 1.0
    slab_d: float = 1.0
    sigma_lambda_sq: float = 1.0
    sample_lambda_scale: bool = False
    lambda_scale_shape: float = 1.0
    lambda_scale_rate: float = 1.0
    wishart_df: float = 8.0
    wishart_scale: float = 1.0
    noise_shape: float = 1.0
    noise_rate: float = 1.0
    prior_mode: str = "correlated"
    ibp_alpha: float = 1.0
    total_iters: int = 20000
    burn_in: int = 5000
    thin: int = 3
    seed: int = 0
    standardize: bool = True
    checkpoint_every: int = 0  # 0 disables periodic checkpoints
    predict_mc: int = 16  # noise draws per retained sample when predicting categories
    workers: int = 1

    def validate(self):
        if self.n_features < 1:
            raise ConfigError("n_features must be positive")
        for name in ("n_factors_rows", "n_factors_cat", "n_factors_real"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.total_iters < 1:
            raise ConfigError("total_iters must be positive")
        if not 0 <= self.burn_in < self.total_iters:
            raise ConfigError("burn_in must satisfy 0 <= burn_in < total_iters")
        if self.thin < 1:
            raise ConfigError("thin must be at least 1")
        if self.prior_mode not in ("correlated", "independent"):
            raise ConfigError(f"unknown prior_mode {self.prior_mode!r}")
        for name in (
            "slab_c",
            "slab_d",
            "sigma_lambda_sq",
            "lambda_scale_shape",
            "lambda_scale_rate",
            "wishart_df",
            "wishart_scale",
            "noise_shape",
            "noise_rate",
            "ibp_alpha",
        ):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.predict_mc < 1:
            raise ConfigError("predict_mc must be at least 1")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        return self

    def hyper(self) -> HyperParams:
        return HyperParams(
            n_features=self.n_features,
            n_factors_rows=self.n_factors_rows,
            n_factors_cat=self.n_factors_cat,
            n_factors_real=self.n_factors_real,
            slab_c=self.slab_c,
            slab_d=self.slab_d,
            sigma_lambda_sq=self.sigma_lambda_sq,
            sample_lambda_scale=self.sample_lambda_scale,
            lambda_scale_shape=self.lambda_scale_shape,
            lambda_scale_rate=self.lambda_scale_rate,
            wishart_df=self.wishart_df,
            wishart_scale=self.wishart_scale,
            noise_shape=self.noise_shape,
            noise_rate=self.noise_rate,
            prior_mode=self.prior_mode,
            ibp_alpha=self.ibp_alpha,
        )

    def to_dict(self) -> dict:
        payload = asdict(self)
        payload["version"] = CONFIG_VERSION
        return payload

    @classmethod
    def from_dict(cls, payload: dict) -> "RunConfig":
        payload = dict(payload)
        version = payload.pop("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {version}")
        known = set(cls.__dataclass_fields__)
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**payload).validate()

    def replace(self, **updates) -> "RunConfig":
        payload = asdict(self)
        payload.update({k: v for k, v in updates.items() if v is not None})
        return RunConfig(**payload).validate()


def load_config(path=None, **overrides) -> RunConfig:
    """Load a config file (optional) and apply non-None keyword overrides."""
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            payload = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from exc
        cfg = RunConfig.from_dict(payload)
    else:
        cfg = RunConfig()
    return cfg.replace(**overrides)


def config_hash(cfg: RunConfig) -> str:
    canonical = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]
