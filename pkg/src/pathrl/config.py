"""Run configuration: validated dataclasses, presets, file/flag layering, hashing.

A config is the complete recipe for a run. Everything derived (discount,
entropy target, value support) comes from pure functions of the config plus
environment constants, so two processes given equal configs build equal runs.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass

from .envs import ENV_REGISTRY, EnvSpec
from .errors import ConfigurationError
from .hl_gauss import HlGaussSpec

LOSS_VARIANTS = ("lagrangian", "clipped")


@dataclass(frozen=True)
class TrainConfig:
    env: str = "pendulum"
    seed: int = 0
    n_envs: int = 64
    n_steps: int = 64
    n_epochs: int = 8
    n_minibatches: int = 16
    total_steps: int = 400_000
    lr: float = 3e-4
    dual_lr: float = 1e-2
    max_grad_norm: float = 0.5
    td_lambda: float = 0.95
    kl_target: float = 0.1
    entropy_target_scale: float = 0.5
    alpha_start: float = 0.01
    beta_start: float = 0.01
    aux_mult: float = 1.0
    hidden_dim: int = 128
    num_bins: int = 151
    sigma_ratio: float = 0.75
    eval_interval: int = 5
    eval_episodes: int = 16
    use_hl_gauss: bool = True
    use_layer_norm: bool = True
    use_aux_loss: bool = True
    use_kl_reg: bool = True
    loss_variant: str = "lagrangian"

    def __post_init__(self):
        if self.env not in ENV_REGISTRY:
            raise ConfigurationError(f"unknown environment {self.env!r}, have {sorted(ENV_REGISTRY)}")
        for name in ("n_envs", "n_steps", "n_epochs", "n_minibatches", "total_steps",
                     "hidden_dim", "eval_interval", "eval_episodes"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v <= 0:
                raise ConfigurationError(f"{name} must be a positive integer, got {v!r}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigurationError(f"seed must be a non-negative integer, got {self.seed!r}")
        for name in ("max_grad_norm", "kl_target"):
            v = getattr(self, name)
            if not v > 0:
                raise ConfigurationError(f"{name} must be positive, got {v!r}")
        for name in ("lr", "dual_lr"):
            # zero is allowed: it freezes the corresponding updates
            v = getattr(self, name)
            if v < 0:
                raise ConfigurationError(f"{name} must be non-negative, got {v!r}")
        for name in ("alpha_start", "beta_start", "aux_mult", "entropy_target_scale"):
            v = getattr(self, name)
            if v < 0:
                raise ConfigurationError(f"{name} must be non-negative, got {v!r}")
        if not 0.0 <= self.td_lambda <= 1.0:
            raise ConfigurationError(f"td_lambda must lie in [0, 1], got {self.td_lambda!r}")
        if self.num_bins < 2:
            raise ConfigurationError(f"num_bins must be at least 2, got {self.num_bins!r}")
        if not self.sigma_ratio > 0:
            raise ConfigurationError(f"sigma_ratio must be positive, got {self.sigma_ratio!r}")
        if self.loss_variant not in LOSS_VARIANTS:
            raise ConfigurationError(
                f"loss_variant must be one of {LOSS_VARIANTS}, got {self.loss_variant!r}")
        if (self.n_envs * self.n_steps) % self.n_minibatches != 0:
            raise ConfigurationError(
                f"n_envs*n_steps={self.n_envs * self.n_steps} is not divisible by "
                f"n_minibatches={self.n_minibatches}")
        if self.total_steps < self.n_envs * self.n_steps:
            raise ConfigurationError(
                f"total_steps={self.total_steps} is below one rollout of "
                f"{self.n_envs * self.n_steps} env steps")

    # --- derived quantities ---------------------------------------------
    @property
    def env_spec(self) -> EnvSpec:
        return ENV_REGISTRY[self.env].spec

    @property
    def batch_size(self) -> int:
        return self.n_envs * self.n_steps

    @property
    def minibatch_size(self) -> int:
        return self.batch_size // self.n_minibatches

    @property
    def n_iterations(self) -> int:
        return self.total_steps // self.batch_size

    @property
    def gamma(self) -> float:
        # fixed ten-step effective horizon scaling with the episode length
        return 1.0 - 10.0 / self.env_spec.episode_length

    @property
    def entropy_target(self) -> float:
        return self.entropy_target_scale * self.env_spec.action_dim

    @property
    def effective_aux_mult(self) -> float:
        return self.aux_mult if self.use_aux_loss else 0.0

    def hl_spec(self) -> HlGaussSpec:
        # geometric-sum bounds on the discounted return fix the support
        spec = self.env_spec
        vmin = spec.reward_low / (1.0 - self.gamma)
        vmax = spec.reward_high / (1.0 - self.gamma)
        return HlGaussSpec.for_support(vmin, vmax, self.num_bins, self.sigma_ratio)


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(TrainConfig)}

PRESETS = {
    # desk scale: minutes per run on a laptop core, used by the test suite
    "desk": {},
    # throughput scale the method is normally run at; not desk-checkable
    "full": {
        "n_envs": 1024,
        "n_steps": 128,
        "n_minibatches": 64,
        "hidden_dim": 512,
        "total_steps": 50_000_000,
        "dual_lr": 3e-4,
    },
}


def _check_keys(data: dict, where: str) -> None:
    unknown = sorted(set(data) - set(_FIELD_TYPES))
    if unknown:
        raise ConfigurationError(f"unknown config keys in {where}: {', '.join(unknown)}")


def _check_value_types(data: dict, where: str) -> None:
    for key, value in data.items():
        want = _FIELD_TYPES[key]
        if want in ("int", int):
            ok = isinstance(value, int) and not isinstance(value, bool)
        elif want in ("float", float):
            ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        elif want in ("bool", bool):
            ok = isinstance(value, bool)
        else:
            ok = isinstance(value, str)
        if not ok:
            raise ConfigurationError(f"bad type for {key!r} in {where}: {value!r}")


def config_from_sources(preset: str = "full", file: str | None = None,
                        overrides: dict | None = None) -> TrainConfig:
    """Layer preset defaults, then a JSON file, then explicit overrides.

    With no sources at all this yields the full-scale defaults; the desk
    preset is the opt-in, test-sized variant.
    """
    if preset not in PRESETS:
        raise ConfigurationError(f"unknown preset {preset!r}, have {sorted(PRESETS)}")
    merged = dict(PRESETS[preset])
    data = _load_json(file)
    if data is not None:
        _check_keys(data, file)
        _check_value_types(data, file)
        merged.update(data)
    if overrides:
        _check_keys(overrides, "overrides")
        _check_value_types(overrides, "overrides")
        merged.update(overrides)
    return TrainConfig(**merged)


def config_to_dict(config: TrainConfig) -> dict:
    return dataclasses.asdict(config)


def config_hash(config: TrainConfig) -> str:
    """Twelve hex chars over the canonical JSON form."""
    blob = json.dumps(config_to_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def run_dir_name(config: TrainConfig) -> str:
    return f"{config.env}-s{config.seed}-{config_hash(config)[:8]}"


@dataclass(frozen=True)
class LabConfig:
    """Gradient-estimator comparison on the fixed analytic test surface."""

    seed: int = 0
    n_steps: int = 400
    n_samples: int = 5
    lr: float = 0.02
    # start near the basin of the better optimum, moderately spread
    init_mean: tuple = (0.3, -0.5)
    init_log_std: float = math.log(0.15)
    baseline_decay: float = 0.9
    weak_points: int = 32
    strong_points: int = 1024
    surrogate_hidden: int = 16
    surrogate_layers: int = 3
    surrogate_lr: float = 1e-2
    surrogate_max_steps: int = 20_000
    n_seeds: int = 20

    def __post_init__(self):
        for name in ("n_steps", "n_samples", "weak_points", "strong_points",
                     "surrogate_hidden", "surrogate_layers", "surrogate_max_steps",
                     "n_seeds"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v <= 0:
                raise ConfigurationError(f"{name} must be a positive integer, got {v!r}")
        for name in ("lr", "surrogate_lr"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)!r}")
        if len(self.init_mean) != 2:
            raise ConfigurationError("init_mean must have two components")
        if not 0.0 <= self.baseline_decay < 1.0:
            raise ConfigurationError(
                f"baseline_decay must be in [0, 1), got {self.baseline_decay!r}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigurationError(f"seed must be a non-negative integer, got {self.seed!r}")


_LAB_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(LabConfig)}


def lab_config_from_sources(file: str | None = None,
                            overrides: dict | None = None) -> LabConfig:
    """Same layering as the trainer config, for the estimator study."""
    merged: dict = {}
    for source, where in ((_load_json(file), file), (overrides, "overrides")):
        if not source:
            continue
        unknown = sorted(set(source) - set(_LAB_FIELD_TYPES))
        if unknown:
            raise ConfigurationError(f"unknown config keys in {where}: {', '.join(unknown)}")
        for key, value in source.items():
            want = _LAB_FIELD_TYPES[key]
            if want in ("int", int):
                ok = isinstance(value, int) and not isinstance(value, bool)
            elif want in ("float", float):
                ok = isinstance(value, (int, float)) and not isinstance(value, bool)
            elif want in ("tuple", tuple):
                ok = isinstance(value, (list, tuple))
                value = tuple(value) if ok else value
            else:
                ok = isinstance(value, str)
            if not ok:
                raise ConfigurationError(f"bad type for {key!r} in {where}: {value!r}")
            merged[key] = value
    return LabConfig(**merged)


def _load_json(file: str | None) -> dict | None:
    if file is None:
        return None
    try:
        with open(file) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"config file {file} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigurationError(f"config file {file} must hold a JSON object")
    return data
