"""Hand-rolled dense network substrate.

Every network in the package is a stack of ``linear -> (layer norm) -> silu``
blocks with a plain linear output layer. Forward passes record the
intermediate values needed to run the exact reverse-mode sweep by hand, so
losses elsewhere can assemble their gradients without an autodiff framework.

All math is float64 and batched inputs are ``(batch, features)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, NumericError

LN_EPS = 1e-5


def silu(z: np.ndarray) -> np.ndarray:
    return z * expit(z)


def silu_grad(z: np.ndarray) -> np.ndarray:
    # d/dz [z*sigmoid(z)] = sigmoid(z) * (1 + z * (1 - sigmoid(z)))
    s = expit(z)
    return s * (1.0 + z * (1.0 - s))


@dataclass(frozen=True)
class MlpSpec:
    """Shape of a dense stack.

    ``num_layers`` counts linear layers. Each non-final layer is followed by
    optional layer norm and a silu; the final layer is linear only.
    """

    input_dim: int
    hidden_dim: int
    output_dim: int
    num_layers: int
    use_layer_norm: bool = False

    def __post_init__(self) -> None:
        for name in ("input_dim", "hidden_dim", "output_dim", "num_layers"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigurationError(f"MlpSpec.{name} must be a positive integer, got {value!r}")

    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [self.input_dim] + [self.hidden_dim] * (self.num_layers - 1) + [self.output_dim]
        return list(zip(dims[:-1], dims[1:]))

    def num_params(self) -> int:
        n = sum(din * dout + dout for din, dout in self.layer_dims())
        if self.use_layer_norm:
            n += 2 * sum(dout for _, dout in self.layer_dims()[:-1])
        return n


@dataclass
class MlpParams:
    """Parameter arrays for one MlpSpec; also reused as the gradient container."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    ln_scales: list[np.ndarray]
    ln_offsets: list[np.ndarray]

    def copy(self) -> "MlpParams":
        return MlpParams(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            [s.copy() for s in self.ln_scales],
            [o.copy() for o in self.ln_offsets],
        )


def init_mlp(spec: MlpSpec, rng: np.random.Generator, final_gain: float = 1.0) -> MlpParams:
    """Scaled-uniform init, approximately norm-preserving per layer.

    Weights are drawn from U(-g*sqrt(3/fan_in), +g*sqrt(3/fan_in)) so that
    E||Wx||^2 = g^2 ||x||^2 for unit-variance inputs. Hidden layers use gain
    1; the output layer uses ``final_gain`` (policy trunks pass 0.01 to start
    near-uniform). Biases start at zero, layer norm at scale 1 / offset 0.
    """
    dims = spec.layer_dims()
    weights, biases = [], []
    for l, (din, dout) in enumerate(dims):
        gain = final_gain if l == len(dims) - 1 else 1.0
        bound = gain * np.sqrt(3.0 / din)
        weights.append(rng.uniform(-bound, bound, size=(din, dout)))
        biases.append(np.zeros(dout))
    ln_scales, ln_offsets = [], []
    if spec.use_layer_norm:
        ln_scales = [np.ones(dout) for _, dout in dims[:-1]]
        ln_offsets = [np.zeros(dout) for _, dout in dims[:-1]]
    return MlpParams(weights, biases, ln_scales, ln_offsets)


def layer_norm(x: np.ndarray, scale: np.ndarray, offset: np.ndarray, eps: float = LN_EPS) -> np.ndarray:
    """Normalize the last axis with population statistics, then affine."""
    x = np.asarray(x, dtype=np.float64)
    if scale.shape != (x.shape[-1],) or offset.shape != (x.shape[-1],):
        raise ConfigurationError(
            f"layer_norm scale/offset must have shape ({x.shape[-1]},), "
            f"got {scale.shape} and {offset.shape}"
        )
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return scale * centered / np.sqrt(var + eps) + offset


def _check_params(params: MlpParams, spec: MlpSpec) -> None:
    dims = spec.layer_dims()
    if len(params.weights) != len(dims) or len(params.biases) != len(dims):
        raise ConfigurationError("parameter list length does not match spec")
    for (din, dout), w, b in zip(dims, params.weights, params.biases):
        if w.shape != (din, dout) or b.shape != (dout,):
            raise ConfigurationError(f"layer shape mismatch: expected {(din, dout)}, got {w.shape}")
    n_ln = len(dims) - 1 if spec.use_layer_norm else 0
    if len(params.ln_scales) != n_ln or len(params.ln_offsets) != n_ln:
        raise ConfigurationError("layer norm parameter count does not match spec")


def mlp_forward(params: MlpParams, spec: MlpSpec, x: np.ndarray) -> tuple[np.ndarray, list[dict]]:
    """Run the stack on a batch; returns (output, cache) for the backward sweep."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ConfigurationError(f"expected input of shape (batch, {spec.input_dim}), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite input to mlp_forward")
    _check_params(params, spec)

    cache: list[dict] = []
    h = x
    last = spec.num_layers - 1
    for l in range(spec.num_layers):
        u = h @ params.weights[l] + params.biases[l]
        if l == last:
            cache.append({"x": h})
            h = u
            continue
        entry: dict = {"x": h}
        if spec.use_layer_norm:
            mu = u.mean(axis=-1, keepdims=True)
            centered = u - mu
            var = (centered * centered).mean(axis=-1, keepdims=True)
            inv = 1.0 / np.sqrt(var + LN_EPS)
            xhat = centered * inv
            pre = params.ln_scales[l] * xhat + params.ln_offsets[l]
            entry["xhat"] = xhat
            entry["inv"] = inv
        else:
            pre = u
        entry["pre"] = pre
        # the sigmoid is reused by the backward sweep
        sig = expit(pre)
        entry["sig"] = sig
        cache.append(entry)
        h = pre * sig
    return h, cache


def mlp_backward(
    params: MlpParams, spec: MlpSpec, cache: list[dict], upstream: np.ndarray,
    input_grad_only: bool = False,
) -> tuple[MlpParams | None, np.ndarray]:
    """Exact reverse-mode sweep for <upstream, output>.

    Returns (grads, input_grad). ``grads`` mirrors the parameter structure and
    is summed over the batch; ``input_grad`` keeps the batch axis. With
    ``input_grad_only`` the parameter gradients are skipped entirely (grads is
    None), which halves the matmul count when only the input matters.
    """
    _check_params(params, spec)
    if len(cache) != spec.num_layers:
        raise ConfigurationError("cache does not match spec (wrong forward pass?)")
    upstream = np.asarray(upstream, dtype=np.float64)
    batch = cache[0]["x"].shape[0]
    if upstream.shape != (batch, spec.output_dim):
        raise ConfigurationError(
            f"expected upstream of shape ({batch}, {spec.output_dim}), got {upstream.shape}"
        )

    grads = None if input_grad_only else MlpParams(
        [np.empty_like(w) for w in params.weights],
        [np.empty_like(b) for b in params.biases],
        [np.empty_like(s) for s in params.ln_scales],
        [np.empty_like(o) for o in params.ln_offsets],
    )
    g = upstream
    last = spec.num_layers - 1
    for l in range(last, -1, -1):
        entry = cache[l]
        if l == last:
            gu = g
        else:
            pre, sig = entry["pre"], entry["sig"]
            gp = g * (sig * (1.0 + pre * (1.0 - sig)))
            if spec.use_layer_norm:
                xhat, inv = entry["xhat"], entry["inv"]
                if not input_grad_only:
                    grads.ln_scales[l][...] = (gp * xhat).sum(axis=0)
                    grads.ln_offsets[l][...] = gp.sum(axis=0)
                gx = gp * params.ln_scales[l]
                # standard layer-norm backward with population statistics
                gu = inv * (
                    gx
                    - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
                )
            else:
                gu = gp
        if not input_grad_only:
            grads.weights[l][...] = entry["x"].T @ gu
            grads.biases[l][...] = gu.sum(axis=0)
        g = gu @ params.weights[l].T
    return grads, g


def params_to_flat(params: MlpParams) -> np.ndarray:
    """Canonical flattening: per layer W then b, then all LN scales/offsets in layer order."""
    pieces = []
    for w, b in zip(params.weights, params.biases):
        pieces.append(w.ravel())
        pieces.append(b)
    for s, o in zip(params.ln_scales, params.ln_offsets):
        pieces.append(s)
        pieces.append(o)
    return np.concatenate(pieces) if pieces else np.zeros(0)


def flat_to_params(flat: np.ndarray, spec: MlpSpec) -> MlpParams:
    flat = np.asarray(flat, dtype=np.float64)
    if flat.shape != (spec.num_params(),):
        raise ConfigurationError(f"expected flat vector of length {spec.num_params()}, got {flat.shape}")
    dims = spec.layer_dims()
    weights, biases, ln_scales, ln_offsets = [], [], [], []
    i = 0
    for din, dout in dims:
        weights.append(flat[i : i + din * dout].reshape(din, dout).copy())
        i += din * dout
        biases.append(flat[i : i + dout].copy())
        i += dout
    if spec.use_layer_norm:
        for _, dout in dims[:-1]:
            ln_scales.append(flat[i : i + dout].copy())
            i += dout
            ln_offsets.append(flat[i : i + dout].copy())
            i += dout
    return MlpParams(weights, biases, ln_scales, ln_offsets)


@dataclass
class AdamState:
    """First/second moment accumulators over a flat parameter vector."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(n: int) -> AdamState:
    return AdamState(m=np.zeros(n), v=np.zeros(n))


def adam_step(
    state: AdamState, params: np.ndarray, grads: np.ndarray, lr: float
) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; pure (returns fresh arrays).

    Non-finite gradients reject the update and leave caller state untouched.
    """
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ConfigurationError("adam_step shape mismatch between params, grads, and state")
    if not np.all(np.isfinite(grads)):
        raise NumericError("non-finite gradient passed to adam_step; update rejected")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, AdamState(m=m, v=v, step=t, beta1=state.beta1, beta2=state.beta2, eps=state.eps)


def global_norm(grads: np.ndarray) -> float:
    return float(np.sqrt(np.sum(grads * grads)))


def clip_grad_norm(grads: np.ndarray, max_norm: float) -> np.ndarray:
    """Rescale so the global L2 norm is at most max_norm; no-op below the cap."""
    if max_norm <= 0:
        raise ConfigurationError("max_norm must be positive")
    norm = global_norm(grads)
    if norm > max_norm:
        return grads * (max_norm / norm)
    return grads


def finite_diff_check(loss_and_grad, params: np.ndarray, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_and_grad(flat_params) -> (loss, flat_grad)`` must be deterministic
    (freeze any sampling noise before calling). Coordinate i is compared
    relative to max(1e-8, |fd_i|, 1e-4 * max_j |fd_j|): the floor tied to the
    gradient's overall scale keeps near-zero components from amplifying the
    difference scheme's own roundoff, which is proportional to |loss| / eps.
    """
    params = np.asarray(params, dtype=np.float64)
    loss0, analytic = loss_and_grad(params)
    if not np.isfinite(loss0) or not np.all(np.isfinite(analytic)):
        raise NumericError("loss or gradient is non-finite at the check point")
    if analytic.shape != params.shape:
        raise ConfigurationError("analytic gradient shape does not match params")
    fds = np.empty_like(params)
    for i in range(params.size):
        bumped = params.copy()
        bumped[i] = params[i] + eps
        lo_hi, _ = loss_and_grad(bumped)
        bumped[i] = params[i] - eps
        lo_lo, _ = loss_and_grad(bumped)
        fds[i] = (lo_hi - lo_lo) / (2.0 * eps)
    floor = max(1e-8, 1e-4 * float(np.max(np.abs(fds))))
    denom = np.maximum(np.abs(fds), floor)
    return float(np.max(np.abs(analytic - fds) / denom))
