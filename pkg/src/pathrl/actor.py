"""Pathwise policy losses and the entropy/KL dual controller.

The actor is a single trunk emitting per-state mean and raw log-std (clamped
to a fixed range). Its gradient has exactly three ingredients per state:

- the value path: d(-Q)/d(action) chained through the reparameterized sample,
- the entropy path: the coefficient exp(log_alpha) times d(log pi) of the
  fresh sample, which flows both directly through (mean, log_std) and through
  the sample itself,
- the trust-region path: the coefficient exp(log_beta) times the sampled
  forward KL against the rollout-time behavior head, differentiated only
  through the current density.

The critic is consumed read-only: its parameter gradients are computed as a
byproduct of the input-gradient sweep and dropped on the floor.

Dual variables live in log space. A violated constraint increases its own
multiplier: entropy below target raises log_alpha, KL above target raises
log_beta.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .critic import CriticParams, CriticSpec, critic_forward
from .errors import ConfigurationError, NumericError
from .hl_gauss import HlGaussSpec, softmax
from .nets import MlpParams, MlpSpec, init_mlp, mlp_backward, mlp_forward
from .tanh_gaussian import LOG_STD_MAX, LOG_STD_MIN, GaussianHead, log_prob, log_prob_grads

LOG_DUAL_MIN = -20.0
LOG_DUAL_MAX = 5.0
NEG_INF = float("-inf")


@dataclass(frozen=True)
class ActorSpec:
    obs_dim: int
    action_dim: int
    hidden_dim: int
    num_layers: int = 3
    use_layer_norm: bool = True

    def trunk_spec(self) -> MlpSpec:
        return MlpSpec(
            input_dim=self.obs_dim,
            hidden_dim=self.hidden_dim,
            output_dim=2 * self.action_dim,
            num_layers=self.num_layers,
            use_layer_norm=self.use_layer_norm,
        )


def init_actor(spec: ActorSpec, rng: np.random.Generator) -> MlpParams:
    # small final gain keeps the initial policy near-uniform over the cube
    return init_mlp(spec.trunk_spec(), rng, final_gain=0.01)


def actor_head(params: MlpParams, spec: ActorSpec, obs: np.ndarray):
    """Trunk forward pass; returns (head, raw_log_std, cache)."""
    out, cache = mlp_forward(params, spec.trunk_spec(), obs)
    d = spec.action_dim
    mean = out[:, :d]
    raw = out[:, d:]
    head = GaussianHead(mean=mean, log_std=np.clip(raw, LOG_STD_MIN, LOG_STD_MAX))
    return head, raw, cache


@dataclass(frozen=True)
class DualState:
    """Log-space Lagrange multipliers and their targets."""

    log_alpha: float
    log_beta: float
    entropy_target: float
    kl_target: float
    lr_alpha: float
    lr_beta: float

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha))

    @property
    def beta(self) -> float:
        return float(np.exp(self.log_beta))


def dual_update(duals: DualState, mean_entropy: float, mean_kl: float) -> DualState:
    """One multiplicative root-finding step on each multiplier, then clamp.

    log_alpha moves against (entropy - target): entropy deficits grow the
    entropy bonus. log_beta moves with (kl - target): overshooting the trust
    region grows the penalty.
    """
    if not (np.isfinite(mean_entropy) and np.isfinite(mean_kl)):
        raise NumericError("dual_update received non-finite statistics")
    # lr == 0 freezes the multiplier, and a multiplier pinned at exactly 0
    # (log -inf) is a fixed point of the multiplicative step; clamping either
    # case would silently revive it at exp(LOG_DUAL_MIN).
    if duals.lr_alpha == 0.0 or duals.log_alpha == NEG_INF:
        la = duals.log_alpha
    else:
        la = duals.log_alpha - duals.lr_alpha * np.exp(duals.log_alpha) * (mean_entropy - duals.entropy_target)
        la = float(np.clip(la, LOG_DUAL_MIN, LOG_DUAL_MAX))
    if duals.lr_beta == 0.0 or duals.log_beta == NEG_INF:
        lb = duals.log_beta
    else:
        lb = duals.log_beta + duals.lr_beta * np.exp(duals.log_beta) * (mean_kl - duals.kl_target)
        lb = float(np.clip(lb, LOG_DUAL_MIN, LOG_DUAL_MAX))
    return replace(duals, log_alpha=la, log_beta=lb)


@dataclass
class ActorBatch:
    """Minibatch view of the rollout as the actor losses consume it."""

    obs: np.ndarray
    behavior_mean: np.ndarray
    behavior_log_std: np.ndarray
    behavior_pre_tanh: np.ndarray
    behavior_log_prob: np.ndarray


@dataclass
class PolicyStats:
    mean_entropy: float
    mean_kl: float
    mean_q: float
    frac_within_kl: float


def policy_loss(
    actor_params: MlpParams,
    actor_spec: ActorSpec,
    critic_params: CriticParams,
    critic_spec: CriticSpec,
    hl_spec: HlGaussSpec | None,
    batch: ActorBatch,
    duals: DualState,
    noise: np.ndarray,
    use_kl: bool = True,
) -> tuple[float, MlpParams, PolicyStats]:
    """Lagrangian actor loss: mean(-Q + alpha*log pi(fresh) + beta*sampled KL)."""
    return _policy_loss_impl(
        actor_params, actor_spec, critic_params, critic_spec, hl_spec, batch, duals, noise,
        use_kl=use_kl, clipped=False,
    )


def clipped_policy_loss(
    actor_params: MlpParams,
    actor_spec: ActorSpec,
    critic_params: CriticParams,
    critic_spec: CriticSpec,
    hl_spec: HlGaussSpec | None,
    batch: ActorBatch,
    duals: DualState,
    noise: np.ndarray,
    use_kl: bool = True,
) -> tuple[float, MlpParams, PolicyStats]:
    """Per-state branch: improve (-Q + alpha*log pi) inside the trust region,
    pay only the KL penalty outside it. The branch condition is treated as a
    constant, like any clipping."""
    return _policy_loss_impl(
        actor_params, actor_spec, critic_params, critic_spec, hl_spec, batch, duals, noise,
        use_kl=use_kl, clipped=True,
    )


def _policy_loss_impl(
    actor_params: MlpParams,
    actor_spec: ActorSpec,
    critic_params: CriticParams,
    critic_spec: CriticSpec,
    hl_spec: HlGaussSpec | None,
    batch: ActorBatch,
    duals: DualState,
    noise: np.ndarray,
    use_kl: bool,
    clipped: bool,
) -> tuple[float, MlpParams, PolicyStats]:
    n = batch.obs.shape[0]
    d = actor_spec.action_dim
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != (n, d):
        raise ConfigurationError(f"expected noise of shape ({n}, {d}), got {noise.shape}")

    head, raw, trunk_cache = actor_head(actor_params, actor_spec, batch.obs)
    sigma = np.exp(head.log_std)
    z = head.mean + sigma * noise
    action = np.tanh(z)

    fwd = critic_forward(critic_params, critic_spec, hl_spec, batch.obs, action)
    lp_new = log_prob(head, z)
    lp_cur = log_prob(head, batch.behavior_pre_tanh)
    kl_rows = batch.behavior_log_prob - lp_cur

    alpha = float(np.exp(duals.log_alpha))
    beta = float(np.exp(duals.log_beta)) if use_kl else 0.0

    if clipped:
        within = kl_rows < duals.kl_target
        w = within.astype(np.float64)
        loss_rows = w * (-fwd.q + alpha * lp_new) + (1.0 - w) * (beta * kl_rows)
        w_q = -w / n
        w_new = alpha * w / n
        w_kl = beta * (1.0 - w) / n
        frac_within = float(np.mean(w))
    else:
        loss_rows = -fwd.q + alpha * lp_new + beta * kl_rows
        w_q = np.full(n, -1.0 / n)
        w_new = np.full(n, alpha / n)
        w_kl = np.full(n, beta / n)
        frac_within = float(np.mean(kl_rows < duals.kl_target))
    loss = float(np.mean(loss_rows))
    if not np.isfinite(loss):
        raise NumericError("policy loss is non-finite")

    # --- value path: d q / d logits, back through head and encoder to the action
    if critic_spec.use_hl_gauss:
        probs = softmax(fwd.logits)
        centers = hl_spec.bin_centers()
        d_logits = w_q[:, None] * probs * (centers[None, :] - fwd.q[:, None])
    else:
        d_logits = np.zeros_like(fwd.logits)
        d_logits[:, 0] = w_q
    enc_cache, head_cache = fwd.caches
    _, d_emb = mlp_backward(critic_params.head, critic_spec.head_spec(), head_cache, d_logits,
                            input_grad_only=True)
    _, d_pair = mlp_backward(critic_params.encoder, critic_spec.encoder_spec(), enc_cache, d_emb,
                             input_grad_only=True)
    d_action = d_pair[:, critic_spec.obs_dim :]

    # --- density paths
    dm_new, dls_new, dz_new = log_prob_grads(head, z)
    dm_cur, dls_cur, _ = log_prob_grads(head, batch.behavior_pre_tanh)

    g_z = d_action * (1.0 - action * action) + w_new[:, None] * dz_new
    g_mean = g_z + w_new[:, None] * dm_new - w_kl[:, None] * dm_cur
    g_log_std = g_z * (z - head.mean) + w_new[:, None] * dls_new - w_kl[:, None] * dls_cur
    inside = (raw > LOG_STD_MIN) & (raw < LOG_STD_MAX)
    g_raw = g_log_std * inside.astype(np.float64)

    upstream = np.concatenate([g_mean, g_raw], axis=1)
    grads, _ = mlp_backward(actor_params, actor_spec.trunk_spec(), trunk_cache, upstream)

    stats = PolicyStats(
        mean_entropy=float(-np.mean(lp_new)),
        mean_kl=float(np.mean(kl_rows)),
        mean_q=float(np.mean(fwd.q)),
        frac_within_kl=frac_within,
    )
    return loss, grads, stats
