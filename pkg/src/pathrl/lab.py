"""Side-by-side study of gradient estimators on an analytic test surface.

Four ways to climb the same hill: a score-function estimator, the exact
pathwise gradient, and pathwise gradients routed through two learned
surrogates of different quality. The surface is the negated six-hump camel
function, so "up" means toward its global minima. Everything here is small
enough to run in seconds and deterministic per seed.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .config import LabConfig
from .errors import ConfigurationError, NumericError
from .nets import (
    MlpParams,
    MlpSpec,
    adam_init,
    adam_step,
    flat_to_params,
    init_mlp,
    mlp_backward,
    mlp_forward,
    params_to_flat,
)

# sampling box for surrogate training data: covers the central humps
DOMAIN = ((-2.0, 2.0), (-1.0, 1.0))

TRACE_COLUMNS = ("step", "mean_x", "mean_y", "log_std_x", "log_std_y", "objective")

METHODS = ("score", "pathwise_true", "pathwise_weak", "pathwise_strong")


def camel(points: np.ndarray) -> np.ndarray:
    """Six-hump camel function, vectorized over a trailing xy axis."""
    points = np.asarray(points, dtype=np.float64)
    if points.shape[-1] != 2:
        raise ConfigurationError(f"expected xy points, got shape {points.shape}")
    x, y = points[..., 0], points[..., 1]
    x2 = x * x
    y2 = y * y
    return (4.0 - 2.1 * x2 + x2 * x2 / 3.0) * x2 + x * y + (-4.0 + 4.0 * y2) * y2


def camel_grad(points: np.ndarray) -> np.ndarray:
    """Closed-form gradient of camel, same batch shape with xy axis kept."""
    points = np.asarray(points, dtype=np.float64)
    x, y = points[..., 0], points[..., 1]
    gx = 8.0 * x - 8.4 * x**3 + 2.0 * x**5 + y
    gy = x - 8.0 * y + 16.0 * y**3
    return np.stack([gx, gy], axis=-1)


@dataclass(frozen=True)
class SearchDistribution:
    """Diagonal Gaussian over the 2-d search space."""

    mean: np.ndarray
    log_std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        log_std = np.asarray(self.log_std, dtype=np.float64)
        if mean.shape != (2,) or log_std.shape != (2,):
            raise ConfigurationError("search distribution lives on 2-d points")
        if not (np.isfinite(mean).all() and np.isfinite(log_std).all()):
            raise NumericError("non-finite search distribution")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "log_std", log_std)

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.log_std)


def initial_distribution(config: LabConfig) -> SearchDistribution:
    return SearchDistribution(
        mean=np.array(config.init_mean, dtype=np.float64),
        log_std=np.full(2, config.init_log_std),
    )


class GroundTruth:
    """The negated camel surface itself: exact values and exact gradients."""

    def value(self, x: np.ndarray) -> np.ndarray:
        return -camel(x)

    def value_and_grad(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return -camel(x), -camel_grad(x)


class SurrogateObjective:
    """A fitted network standing in for the surface; gradients come from
    backpropagation to the inputs, not from the true function."""

    def __init__(self, params: MlpParams, spec: MlpSpec):
        self.params = params
        self.spec = spec

    def value(self, x: np.ndarray) -> np.ndarray:
        out, _ = mlp_forward(self.params, self.spec, np.atleast_2d(x))
        return out[:, 0]

    def value_and_grad(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = np.atleast_2d(x)
        out, cache = mlp_forward(self.params, self.spec, x)
        # rows are independent, so a ones upstream yields per-row input grads
        _, d_in = mlp_backward(self.params, self.spec, cache,
                               np.ones((x.shape[0], 1)), input_grad_only=True)
        return out[:, 0], d_in


def score_step(dist: SearchDistribution, objective, noise: np.ndarray, lr: float,
               baseline: float = 0.0) -> tuple[SearchDistribution, float]:
    """Likelihood-ratio ascent step from sampled values only.

    grad_mean = E[(v - baseline) * (x - mean) / var] and
    grad_log_std = E[(v - baseline) * (z^2 - 1)] with z the unit noise; the
    baseline shifts variance, never the expectation.
    """
    noise = np.asarray(noise, dtype=np.float64)
    if noise.ndim != 2 or noise.shape[1] != 2:
        raise ConfigurationError(f"expected noise of shape (n, 2), got {noise.shape}")
    std = dist.std
    x = dist.mean + std * noise
    values = objective.value(x)
    centered = (values - baseline)[:, None]
    g_mean = np.mean(centered * noise / std, axis=0)
    g_log_std = np.mean(centered * (noise * noise - 1.0), axis=0)
    new = SearchDistribution(mean=dist.mean + lr * g_mean,
                             log_std=dist.log_std + lr * g_log_std)
    return new, float(values.mean())


def pathwise_step(dist: SearchDistribution, objective, noise: np.ndarray,
                  lr: float) -> tuple[SearchDistribution, float]:
    """Reparameterized ascent step: differentiate through x = mean + std*z."""
    noise = np.asarray(noise, dtype=np.float64)
    if noise.ndim != 2 or noise.shape[1] != 2:
        raise ConfigurationError(f"expected noise of shape (n, 2), got {noise.shape}")
    std = dist.std
    x = dist.mean + std * noise
    values, grads = objective.value_and_grad(x)
    g_mean = grads.mean(axis=0)
    g_log_std = np.mean(grads * noise, axis=0) * std
    new = SearchDistribution(mean=dist.mean + lr * g_mean,
                             log_std=dist.log_std + lr * g_log_std)
    return new, float(values.mean())


# ------------------------------------------------------------- surrogates


@dataclass(frozen=True)
class SurrogateDataset:
    """Training points for a surrogate; values are the maximized objective."""

    inputs: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.float64)
        if inputs.ndim != 2 or inputs.shape[1] != 2 or values.shape != (inputs.shape[0],):
            raise ConfigurationError("dataset needs (n, 2) inputs and (n,) values")
        if not np.allclose(values, -camel(inputs), atol=1e-12):
            raise ConfigurationError("dataset values must come from the true surface")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "values", values)


def sample_dataset(n_points: int, rng: np.random.Generator) -> SurrogateDataset:
    (x_lo, x_hi), (y_lo, y_hi) = DOMAIN
    inputs = rng.uniform([x_lo, y_lo], [x_hi, y_hi], size=(n_points, 2))
    return SurrogateDataset(inputs=inputs, values=-camel(inputs))


def surrogate_spec(config: LabConfig) -> MlpSpec:
    return MlpSpec(input_dim=2, hidden_dim=config.surrogate_hidden, output_dim=1,
                   num_layers=config.surrogate_layers, use_layer_norm=False)


def surrogate_loss_and_grad(flat: np.ndarray, spec: MlpSpec,
                            dataset: SurrogateDataset) -> tuple[float, np.ndarray]:
    """Full-batch squared-error regression loss with exact parameter gradient."""
    params = flat_to_params(flat, spec)
    preds, cache = mlp_forward(params, spec, dataset.inputs)
    err = preds[:, 0] - dataset.values
    n = err.size
    loss = float(np.mean(err * err))
    grads, _ = mlp_backward(params, spec, cache, (2.0 / n) * err[:, None])
    return loss, params_to_flat(grads)


def fit_surrogate(dataset: SurrogateDataset, config: LabConfig,
                  rng: np.random.Generator) -> SurrogateObjective:
    """Adam on the regression loss until it stops improving.

    Plateau rule: every 250 steps, stop once the window's improvement drops
    below 0.1% of the current loss (or the loss hits the float floor).
    """
    spec = surrogate_spec(config)
    flat = params_to_flat(init_mlp(spec, rng))
    opt = adam_init(flat.size)
    check_every = 250
    prev = float("inf")
    loss = float("inf")
    for step in range(1, config.surrogate_max_steps + 1):
        loss, grad = surrogate_loss_and_grad(flat, spec, dataset)
        flat, opt = adam_step(opt, flat, grad, config.surrogate_lr)
        if step % check_every == 0:
            if loss < 1e-10 or prev - loss < 1e-3 * max(loss, 1e-12):
                break
            prev = loss
    return SurrogateObjective(flat_to_params(flat, spec), spec)


# ------------------------------------------------------------- comparison


@dataclass
class ComparisonResult:
    """Traces per method plus the final true-surface values at each mean."""

    traces: dict
    final_objectives: dict


def _true_level(dist: SearchDistribution) -> float:
    return float(-camel(dist.mean))


def run_comparison(config: LabConfig) -> ComparisonResult:
    """All four estimators from the same start, same lr, same sample budget.

    Each method consumes its own child stream of the config seed, so runs are
    reproducible and methods stay independent. The objective column always
    reports the true surface at the current mean, which is what makes weak
    and strong surrogates comparable.
    """
    seq = np.random.SeedSequence(entropy=(config.seed, 0x1AB_CAFE))
    k_weak_data, k_strong_data, k_fit_w, k_fit_s, *k_methods = seq.spawn(4 + len(METHODS))

    weak = fit_surrogate(sample_dataset(config.weak_points, np.random.default_rng(k_weak_data)),
                         config, np.random.default_rng(k_fit_w))
    strong = fit_surrogate(sample_dataset(config.strong_points, np.random.default_rng(k_strong_data)),
                           config, np.random.default_rng(k_fit_s))

    objectives = {
        "score": GroundTruth(),
        "pathwise_true": GroundTruth(),
        "pathwise_weak": weak,
        "pathwise_strong": strong,
    }

    traces = {}
    finals = {}
    for method, key in zip(METHODS, k_methods):
        rng = np.random.default_rng(key)
        dist = initial_distribution(config)
        baseline = 0.0
        rows = []
        for step in range(config.n_steps + 1):
            rows.append({
                "step": step,
                "mean_x": dist.mean[0],
                "mean_y": dist.mean[1],
                "log_std_x": dist.log_std[0],
                "log_std_y": dist.log_std[1],
                "objective": _true_level(dist),
            })
            if step == config.n_steps:
                break
            noise = rng.standard_normal((config.n_samples, 2))
            if method == "score":
                dist, mean_value = score_step(dist, objectives[method], noise,
                                              config.lr, baseline)
                baseline = (config.baseline_decay * baseline
                            + (1.0 - config.baseline_decay) * mean_value)
            else:
                dist, _ = pathwise_step(dist, objectives[method], noise, config.lr)
            # a surrogate consulted outside its data region is meaningless and
            # can send the mean off to its unbounded extrapolation; the search
            # therefore projects back into the sampling box after every step
            lo, hi = zip(*DOMAIN)
            dist = SearchDistribution(mean=np.clip(dist.mean, lo, hi),
                                      log_std=dist.log_std)
        traces[method] = rows
        finals[method] = rows[-1]["objective"]
    return ComparisonResult(traces=traces, final_objectives=finals)


def comparison_study(config: LabConfig) -> dict:
    """Seed-averaged final true-surface values for each method."""
    per_seed = {m: [] for m in METHODS}
    for seed in range(config.n_seeds):
        result = run_comparison(replace(config, seed=config.seed + seed))
        for m in METHODS:
            per_seed[m].append(result.final_objectives[m])
    return {
        "per_seed": {m: np.array(v) for m, v in per_seed.items()},
        "mean_final": {m: float(np.mean(v)) for m, v in per_seed.items()},
    }


def gradient_variance_probe(config: LabConfig, n_probe: int = 10_000,
                            seed: int = 0) -> dict:
    """Per-step mean-gradient variance of both estimators at the start point.

    Holds the distribution fixed, resamples n_probe independent batches of
    n_samples, and compares the trace of the covariance of the mean-gradient
    estimate. The score estimator gets its converged baseline: the average
    value over all probe draws, which is the fixed point of the running mean.
    """
    dist = initial_distribution(config)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, 0x7A9_BEEF)))
    noise = rng.standard_normal((n_probe, config.n_samples, 2))
    std = dist.std
    x = dist.mean + std * noise
    values = -camel(x)
    grads = -camel_grad(x)

    baseline = float(values.mean())
    centered = (values - baseline)[..., None]
    score_est = np.mean(centered * noise / std, axis=1)
    pathwise_est = np.mean(grads, axis=1)

    def cov_trace(estimates):
        return float(np.sum(np.var(estimates, axis=0, ddof=1)))

    score_var = cov_trace(score_est)
    pathwise_var = cov_trace(pathwise_est)
    return {
        "score_variance": score_var,
        "pathwise_variance": pathwise_var,
        "ratio": score_var / pathwise_var,
    }


def render_paths(result: ComparisonResult, out_path) -> None:
    """Optional SVG: method paths over the camel contour. Needs matplotlib."""
    try:
        import matplotlib
        matplotlib.use("svg")
        import matplotlib.pyplot as plt
    except ImportError as e:
        raise ConfigurationError(
            "rendering needs matplotlib; install the 'plots' extra") from e

    (x_lo, x_hi), (y_lo, y_hi) = DOMAIN
    gx, gy = np.meshgrid(np.linspace(x_lo, x_hi, 200), np.linspace(y_lo, y_hi, 200))
    surface = camel(np.stack([gx, gy], axis=-1))

    fig, ax = plt.subplots(figsize=(7, 5))
    contours = ax.contourf(gx, gy, surface, levels=30, cmap="viridis")
    fig.colorbar(contours, ax=ax, label="surface value (minimized)")
    for method, rows in result.traces.items():
        xs = [row["mean_x"] for row in rows]
        ys = [row["mean_y"] for row in rows]
        ax.plot(xs, ys, label=method, linewidth=1.5)
        ax.plot(xs[-1], ys[-1], marker="o", markersize=4)
    ax.legend(loc="upper right", fontsize=8)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    fig.savefig(out_path, format="svg", bbox_inches="tight")
    plt.close(fig)
