"""Entropy-augmented TD(lambda) state-action targets.

Targets are computed over a fixed-length rollout window laid out as
(n_envs, n_steps) tensors. ``next_values`` holds V_{t+1}, the critic's value
of a fresh policy action at the true successor state of step t. A done flag
cuts both bootstrapping and the lambda chain at episode boundaries; the
window end bootstraps from the stored next value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError


@dataclass
class TrajectoryTensor:
    """Rollout window, all arrays (n_envs, n_steps); rewards are already augmented."""

    rewards: np.ndarray
    next_values: np.ndarray
    dones: np.ndarray
    next_log_prob: np.ndarray | None = None

    def __post_init__(self) -> None:
        shape = np.shape(self.rewards)
        if len(shape) != 2:
            raise ConfigurationError(f"expected (n_envs, n_steps) arrays, got {shape}")
        for name in ("next_values", "dones"):
            if np.shape(getattr(self, name)) != shape:
                raise ConfigurationError(f"TrajectoryTensor.{name} shape does not match rewards {shape}")
        if self.next_log_prob is not None and np.shape(self.next_log_prob) != shape:
            raise ConfigurationError("TrajectoryTensor.next_log_prob shape does not match rewards")


def augment_rewards(
    rewards: np.ndarray, next_log_prob: np.ndarray, alpha: float, terminated: np.ndarray
) -> np.ndarray:
    """r~_t = r_t - alpha * log pi(a_{t+1} | x_{t+1}), zeroed where the episode ended.

    No successor action exists past a terminal, so the bonus is masked there.
    """
    if alpha < 0:
        raise ConfigurationError("entropy coefficient must be non-negative")
    rewards = np.asarray(rewards, dtype=np.float64)
    bonus = -alpha * np.asarray(next_log_prob, dtype=np.float64)
    return rewards + bonus * (1.0 - np.asarray(terminated, dtype=np.float64))


def td_lambda_targets(traj: TrajectoryTensor, gamma: float, lam: float) -> np.ndarray:
    """Backward recursion G_t = r~_t + gamma*(1-d_t)*(lam*G_{t+1} + (1-lam)*V_{t+1}).

    Seeded at the window end with G_T := V_T, i.e. the stored next value of
    the final step.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ConfigurationError(f"gamma must be in [0, 1], got {gamma}")
    if not 0.0 <= lam <= 1.0:
        raise ConfigurationError(f"lambda must be in [0, 1], got {lam}")
    rewards = np.asarray(traj.rewards, dtype=np.float64)
    values = np.asarray(traj.next_values, dtype=np.float64)
    live = 1.0 - np.asarray(traj.dones, dtype=np.float64)
    n_envs, n_steps = rewards.shape
    targets = np.empty((n_envs, n_steps))
    g_next = values[:, -1]
    for t in range(n_steps - 1, -1, -1):
        g_next = rewards[:, t] + gamma * live[:, t] * (lam * g_next + (1.0 - lam) * values[:, t])
        targets[:, t] = g_next
    return targets


def nstep_oracle(traj: TrajectoryTensor, gamma: float, lam: float) -> np.ndarray:
    """Brute-force lambda target: explicit mixture of n-step returns.

    From step t with M usable steps (up to the first done, inclusive, or the
    window end), mixes G^(n) with weight (1-lam)*lam^(n-1) for n < M and gives
    the longest return the residual weight lam^(M-1). G^(n) bootstraps from
    the stored V_{t+n}; the longest return only bootstraps when it was cut by
    the window rather than a done. Quadratic per step; reference use only.
    """
    rewards = np.asarray(traj.rewards, dtype=np.float64)
    values = np.asarray(traj.next_values, dtype=np.float64)
    dones = np.asarray(traj.dones, dtype=bool)
    n_envs, n_steps = rewards.shape
    out = np.empty((n_envs, n_steps))
    for e in range(n_envs):
        for t in range(n_steps):
            length = n_steps - t
            ended_by_done = False
            for k in range(t, n_steps):
                if dones[e, k]:
                    length = k - t + 1
                    ended_by_done = True
                    break
            total = 0.0
            for n in range(1, length + 1):
                g_n = 0.0
                for j in range(n):
                    g_n += gamma**j * rewards[e, t + j]
                bootstrap = not (n == length and ended_by_done)
                if bootstrap:
                    g_n += gamma**n * values[e, t + n - 1]
                weight = lam ** (length - 1) if n == length else (1.0 - lam) * lam ** (n - 1)
                total += weight * g_n
            out[e, t] = total
    return out
