"""Analytic vectorized environments and running observation normalization.

Both environments are pure numpy physics over a batch axis. They follow the
auto-reset convention: when an episode ends (termination or time-limit
truncation, mutually exclusive flags), the returned ``obs`` is already the
first observation of the next episode, while ``final_obs`` keeps the
pre-reset observation so bootstrapping can see the true successor state.

Each environment slot owns its own RNG stream, so reset draws in one slot
never perturb another slot's future episodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, SimulationError


@dataclass(frozen=True)
class EnvSpec:
    name: str
    obs_dim: int
    action_dim: int
    episode_length: int
    reward_low: float
    reward_high: float


@dataclass
class BatchState:
    """Physical state of every environment slot plus per-slot step counters."""

    phys: np.ndarray  # (n_envs, state_dim)
    steps: np.ndarray  # (n_envs,) int64, steps taken in the current episode
    rngs: list  # per-slot np.random.Generator, consumed only by resets


@dataclass
class StepResult:
    obs: np.ndarray  # post-auto-reset observation, what the policy sees next
    final_obs: np.ndarray  # pre-reset observation produced by the physics step
    reward: np.ndarray
    terminated: np.ndarray  # episode ended inside the MDP
    truncated: np.ndarray  # episode cut by the time limit (never both)


class VectorEnv:
    """Base class: subclasses provide physics, observation, and init draws."""

    spec: EnvSpec

    def __init__(self, n_envs: int):
        if n_envs <= 0:
            raise ConfigurationError(f"n_envs must be positive, got {n_envs}")
        self.n_envs = n_envs

    # --- subclass hooks -------------------------------------------------
    def _sample_init(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def _physics(self, phys: np.ndarray, actions: np.ndarray):
        """Returns (new_phys, reward, terminated); must not mutate inputs."""
        raise NotImplementedError

    def _observe(self, phys: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    # --- driver ----------------------------------------------------------
    def reset(self, seed) -> tuple[np.ndarray, BatchState]:
        seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        rngs = [np.random.default_rng(child) for child in seq.spawn(self.n_envs)]
        phys = np.stack([self._sample_init(r) for r in rngs])
        steps = np.zeros(self.n_envs, dtype=np.int64)
        state = BatchState(phys=phys, steps=steps, rngs=rngs)
        return self._observe(phys), state

    def step(self, state: BatchState, actions: np.ndarray) -> tuple[StepResult, BatchState]:
        actions = np.asarray(actions, dtype=np.float64)
        if actions.shape != (self.n_envs, self.spec.action_dim):
            raise ConfigurationError(
                f"expected actions of shape ({self.n_envs}, {self.spec.action_dim}), got {actions.shape}"
            )
        finite = np.isfinite(actions).all(axis=1)
        if not finite.all():
            raise SimulationError("non-finite action", env_index=int(np.flatnonzero(~finite)[0]))

        phys, reward, terminated = self._physics(state.phys, actions)
        ok = np.isfinite(phys).all(axis=1)
        if not ok.all():
            raise SimulationError("physics produced non-finite state", env_index=int(np.flatnonzero(~ok)[0]))

        steps = state.steps + 1
        truncated = (steps >= self.spec.episode_length) & ~terminated
        final_obs = self._observe(phys)
        done = terminated | truncated
        if done.any():
            for i in np.flatnonzero(done):
                phys[i] = self._sample_init(state.rngs[i])
                steps[i] = 0
        obs = self._observe(phys)
        result = StepResult(obs=obs, final_obs=final_obs, reward=reward,
                            terminated=terminated, truncated=truncated)
        return result, BatchState(phys=phys, steps=steps, rngs=state.rngs)


def wrap_angle(theta: np.ndarray) -> np.ndarray:
    """Map angles into [-pi, pi)."""
    return np.mod(theta + np.pi, 2.0 * np.pi) - np.pi


_PEND_G = 10.0
_PEND_M = 1.0
_PEND_L = 1.0
_PEND_DT = 0.05
_PEND_MAX_SPEED = 8.0
_PEND_MAX_TORQUE = 2.0

PENDULUM_SPEC = EnvSpec(
    name="pendulum",
    obs_dim=3,
    action_dim=1,
    episode_length=200,
    reward_low=-(np.pi**2 + 0.1 * _PEND_MAX_SPEED**2 + 0.001 * _PEND_MAX_TORQUE**2),
    reward_high=0.0,
)


class PendulumSwingUp(VectorEnv):
    """Underactuated swing-up: angle zero is upright, gravity pulls away from it.

    State is (angle, angular velocity); the angle accumulates unwrapped, only
    the cost wraps it. Cost is charged on the pre-step state, so the first
    step of an episode scores the reset draw. There is no terminal state,
    episodes only truncate.
    """

    spec = PENDULUM_SPEC

    def _sample_init(self, rng):
        return np.array([rng.uniform(-np.pi, np.pi), rng.uniform(-1.0, 1.0)])

    def _observe(self, phys):
        theta, theta_dot = phys[:, 0], phys[:, 1]
        return np.stack([np.cos(theta), np.sin(theta), theta_dot], axis=1)

    def _physics(self, phys, actions):
        theta, theta_dot = phys[:, 0], phys[:, 1]
        u = _PEND_MAX_TORQUE * np.clip(actions[:, 0], -1.0, 1.0)
        wrapped = wrap_angle(theta)
        reward = -(wrapped**2 + 0.1 * theta_dot**2 + 0.001 * u**2)
        accel = (1.5 * _PEND_G / _PEND_L) * np.sin(theta) + 3.0 * u / (_PEND_M * _PEND_L**2)
        new_dot = np.clip(theta_dot + accel * _PEND_DT, -_PEND_MAX_SPEED, _PEND_MAX_SPEED)
        new_theta = theta + new_dot * _PEND_DT
        new_phys = np.stack([new_theta, new_dot], axis=1)
        terminated = np.zeros(phys.shape[0], dtype=bool)
        return new_phys, reward, terminated


def pendulum_energy(phys: np.ndarray) -> np.ndarray:
    """Mechanical energy of the rod: kinetic (inertia m*l^2/3) plus potential
    measured from the pivot, maximal upright. Conserved under zero torque up
    to integrator error, which the tests bound."""
    theta, theta_dot = phys[..., 0], phys[..., 1]
    kinetic = 0.5 * (_PEND_M * _PEND_L**2 / 3.0) * theta_dot**2
    potential = 0.5 * _PEND_M * _PEND_G * _PEND_L * np.cos(theta)
    return kinetic + potential


_PM_DT = 0.1
_PM_GOAL_RADIUS = 0.05

POINTMASS_SPEC = EnvSpec(
    name="pointmass",
    obs_dim=6,
    action_dim=2,
    episode_length=100,
    reward_low=-(2.0 * np.sqrt(2.0) + 0.02),
    reward_high=0.0,
)


class PointMassReacher(VectorEnv):
    """Velocity-integrating point mass chasing a random goal in the unit box.

    Cost is charged on the post-step position, so reaching the goal on this
    step is rewarded on this step. Entering the goal radius terminates.
    """

    spec = POINTMASS_SPEC

    def _sample_init(self, rng):
        pos = rng.uniform(-0.8, 0.8, size=2)
        goal = rng.uniform(-0.8, 0.8, size=2)
        return np.concatenate([pos, np.zeros(2), goal])

    def _observe(self, phys):
        pos, vel, goal = phys[:, 0:2], phys[:, 2:4], phys[:, 4:6]
        return np.concatenate([pos, vel, goal - pos], axis=1)

    def _physics(self, phys, actions):
        a = np.clip(actions, -1.0, 1.0)
        vel = np.clip(phys[:, 2:4] + a * _PM_DT, -1.0, 1.0)
        pos = np.clip(phys[:, 0:2] + vel * _PM_DT, -1.0, 1.0)
        goal = phys[:, 4:6]
        dist = np.linalg.norm(pos - goal, axis=1)
        reward = -dist - 0.01 * np.sum(a * a, axis=1)
        terminated = dist < _PM_GOAL_RADIUS
        new_phys = np.concatenate([pos, vel, goal.copy()], axis=1)
        return new_phys, reward, terminated


ENV_REGISTRY = {
    PENDULUM_SPEC.name: PendulumSwingUp,
    POINTMASS_SPEC.name: PointMassReacher,
}


def make_env(name: str, n_envs: int) -> VectorEnv:
    if name not in ENV_REGISTRY:
        raise ConfigurationError(f"unknown environment {name!r}, have {sorted(ENV_REGISTRY)}")
    return ENV_REGISTRY[name](n_envs)


@dataclass
class NormalizerState:
    """Running first and second moments, mergeable across batches."""

    mean: np.ndarray
    m2: np.ndarray  # sum of squared deviations from the running mean
    count: float


def normalizer_init(dim: int) -> NormalizerState:
    return NormalizerState(mean=np.zeros(dim), m2=np.zeros(dim), count=0.0)


def normalizer_update(state: NormalizerState, batch: np.ndarray) -> NormalizerState:
    """Merge a batch of rows into the running moments (pure, parallel merge)."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != state.mean.shape[0]:
        raise ConfigurationError(f"expected batch of shape (n, {state.mean.shape[0]}), got {batch.shape}")
    if batch.shape[0] == 0:
        return NormalizerState(state.mean.copy(), state.m2.copy(), state.count)
    n = float(batch.shape[0])
    b_mean = batch.mean(axis=0)
    b_m2 = ((batch - b_mean) ** 2).sum(axis=0)
    total = state.count + n
    delta = b_mean - state.mean
    mean = state.mean + delta * (n / total)
    m2 = state.m2 + b_m2 + delta * delta * (state.count * n / total)
    return NormalizerState(mean=mean, m2=m2, count=total)


def normalize(state: NormalizerState, x: np.ndarray) -> np.ndarray:
    """Whiten by the running moments, clip to +-10; identity before any data."""
    x = np.asarray(x, dtype=np.float64)
    if state.count == 0.0:
        return x.copy()
    std = np.sqrt(state.m2 / state.count)
    return np.clip((x - state.mean) / np.maximum(std, 1e-6), -10.0, 10.0)


def denormalize(state: NormalizerState, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if state.count == 0.0:
        return x.copy()
    std = np.sqrt(state.m2 / state.count)
    return x * np.maximum(std, 1e-6) + state.mean
