"""Gaussian-smoothed histogram targets for categorical value regression.

A scalar y is represented as the probability mass a Gaussian N(y, sigma^2)
assigns to each of a fixed set of bins spanning [vmin, vmax]. The two
boundary bins absorb the tails, so the vector always sums to one and values
outside the support degrade gracefully instead of erroring. Regression is
cross-entropy between this projection and a softmax over predicted logits;
the scalar estimate is read back as the softmax-weighted mean of bin centers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import ConfigurationError, NumericError

DEFAULT_SIGMA_RATIO = 0.75


@dataclass(frozen=True)
class HlGaussSpec:
    vmin: float
    vmax: float
    num_bins: int
    sigma: float

    def __post_init__(self) -> None:
        if not self.vmax > self.vmin:
            raise ConfigurationError(f"vmax must exceed vmin, got [{self.vmin}, {self.vmax}]")
        if self.num_bins < 2:
            raise ConfigurationError("num_bins must be >= 2")
        if not self.sigma > 0:
            raise ConfigurationError("sigma must be positive")

    @property
    def bin_width(self) -> float:
        return (self.vmax - self.vmin) / self.num_bins

    def bin_edges(self) -> np.ndarray:
        return np.linspace(self.vmin, self.vmax, self.num_bins + 1)

    def bin_centers(self) -> np.ndarray:
        edges = self.bin_edges()
        return 0.5 * (edges[:-1] + edges[1:])

    @classmethod
    def for_support(
        cls, vmin: float, vmax: float, num_bins: int, sigma_ratio: float = DEFAULT_SIGMA_RATIO
    ) -> "HlGaussSpec":
        """Build a spec with sigma tied to the bin width (default 0.75x)."""
        width = (vmax - vmin) / num_bins
        return cls(vmin=vmin, vmax=vmax, num_bins=num_bins, sigma=sigma_ratio * width)


def project_target(y, spec: HlGaussSpec) -> np.ndarray:
    """Project scalar target(s) onto the smoothed histogram.

    Interior bin i receives Phi((upper_i - y)/sigma) - Phi((lower_i - y)/sigma);
    the first and last bins integrate from -inf / to +inf. Output shape is
    y.shape + (num_bins,) and each vector sums to 1 within 1e-12.
    """
    y = np.asarray(y, dtype=np.float64)
    if not np.all(np.isfinite(y)):
        raise NumericError("non-finite target passed to project_target")
    z = (spec.bin_edges() - y[..., None]) / spec.sigma
    cdf = ndtr(z)
    cdf[..., 0] = 0.0
    cdf[..., -1] = 1.0
    probs = np.diff(cdf, axis=-1)
    # telescoping already sums to 1 up to float error; renormalize to nail it
    probs /= probs.sum(axis=-1, keepdims=True)
    return probs


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(logits))


def hl_cross_entropy(logits: np.ndarray, target: np.ndarray):
    """Cross-entropy -sum(target * log softmax(logits)) and its logit gradient.

    Works on single vectors (returns (float, vector)) or batches with matching
    leading axes (returns per-row losses and gradients). Targets must each sum
    to 1 within 1e-6; the gradient is softmax(logits) - target.
    """
    logits = np.asarray(logits, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if logits.shape != target.shape:
        raise ConfigurationError(f"logits shape {logits.shape} != target shape {target.shape}")
    sums = target.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        raise ConfigurationError("cross-entropy target is not normalized (sum != 1 within 1e-6)")
    log_p = _log_softmax(logits)
    loss = -(target * log_p).sum(axis=-1)
    grad = np.exp(log_p) - target
    if logits.ndim == 1:
        return float(loss), grad
    return loss, grad


def expected_value(logits: np.ndarray, spec: HlGaussSpec):
    """Softmax-weighted mean of bin centers; always inside [vmin, vmax]."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape[-1] != spec.num_bins:
        raise ConfigurationError(f"expected {spec.num_bins} logits, got {logits.shape[-1]}")
    value = (softmax(logits) * spec.bin_centers()).sum(axis=-1)
    if logits.ndim == 1:
        return float(value)
    return value
