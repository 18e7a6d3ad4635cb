"""Tanh-squashed diagonal Gaussian policy head.

Actions are a = tanh(z) with z ~ N(mean, exp(log_std)^2). The change of
variables gives

    log pi(a|x) = log N(z; mean, std) - sum_d log(1 - tanh(z_d)^2)

and the Jacobian term is evaluated as 2*(log 2 - z - softplus(-2z)), which is
finite for every finite z (the naive log(1 - tanh^2) underflows around
|z| > 19).

Entropy and the forward KL between two heads have no closed form after the
squash, so both are sample estimates. For the KL the Jacobian terms of the
two densities cancel exactly because they are evaluated at the same pre-tanh
points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_LOG_2 = math.log(2.0)


@dataclass
class GaussianHead:
    """Per-state mean and log standard deviation, shape (..., action_dim)."""

    mean: np.ndarray
    log_std: np.ndarray

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.log_std = np.asarray(self.log_std, dtype=np.float64)
        if self.mean.shape != self.log_std.shape:
            raise ConfigurationError(
                f"mean and log_std shapes differ: {self.mean.shape} vs {self.log_std.shape}"
            )


@dataclass
class ActionSample:
    pre_tanh: np.ndarray
    action: np.ndarray
    log_prob: np.ndarray


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def squash_correction(pre_tanh: np.ndarray) -> np.ndarray:
    """log(1 - tanh(z)^2) per element, computed in a stable form."""
    return 2.0 * (_LOG_2 - pre_tanh - _softplus(-2.0 * pre_tanh))


def log_prob(head: GaussianHead, pre_tanh: np.ndarray) -> np.ndarray:
    """Log density of action tanh(pre_tanh) under the head; sums the last axis."""
    z = np.asarray(pre_tanh, dtype=np.float64)
    u = (z - head.mean) * np.exp(-head.log_std)
    normal = -0.5 * u * u - head.log_std - _HALF_LOG_2PI
    return np.sum(normal - squash_correction(z), axis=-1)


def log_prob_grads(head: GaussianHead, pre_tanh: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-element partials of log_prob w.r.t. (mean, log_std, pre_tanh).

    The pre_tanh partial holds z fixed as an independent input; reparameterized
    samples must add their own dz/dmean and dz/dlog_std chain terms.
    """
    z = np.asarray(pre_tanh, dtype=np.float64)
    inv_std = np.exp(-head.log_std)
    u = (z - head.mean) * inv_std
    d_mean = u * inv_std
    d_log_std = u * u - 1.0
    d_z = -u * inv_std + 2.0 * np.tanh(z)
    return d_mean, d_log_std, d_z


def rsample(head: GaussianHead, noise: np.ndarray) -> ActionSample:
    """Reparameterized draw a = tanh(mean + exp(log_std) * noise)."""
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != head.mean.shape:
        raise ConfigurationError(f"noise shape {noise.shape} does not match head {head.mean.shape}")
    z = head.mean + np.exp(head.log_std) * noise
    return ActionSample(pre_tanh=z, action=np.tanh(z), log_prob=log_prob(head, z))


def entropy_estimate(head: GaussianHead, k: int, rng: np.random.Generator) -> float:
    """Monte Carlo entropy: -mean log pi over k fresh samples (per state, then averaged)."""
    if k < 1:
        raise ConfigurationError("entropy_estimate needs k >= 1")
    noise = rng.standard_normal(size=(k,) + head.mean.shape)
    z = head.mean + np.exp(head.log_std) * noise
    return float(-np.mean(log_prob(head, z)))


def forward_kl_estimate(
    behavior: GaussianHead, current: GaussianHead, behavior_pre_tanh: np.ndarray
) -> float:
    """Sampled KL(behavior || current) from behavior pre-tanh draws.

    Evaluating both densities at the same pre-tanh points makes the tanh
    Jacobian terms cancel exactly, so this equals the pre-squash Gaussian KL
    estimate.
    """
    z = np.asarray(behavior_pre_tanh, dtype=np.float64)
    return float(np.mean(log_prob(behavior, z) - log_prob(current, z)))
