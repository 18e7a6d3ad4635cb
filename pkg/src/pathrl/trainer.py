"""Training orchestration: rollout collection, lambda-return targets,
epoch/minibatch optimization, behavior-policy synchronization, evaluation.

One iteration is: collect a fresh on-policy rollout with the frozen behavior
policy, compute entropy-augmented lambda returns against the current critic's
bootstrap values, then run several shuffled-minibatch epochs where each
minibatch does a critic step, an actor step, and a dual-variable step. The
behavior copy is synchronized to the actor only after the whole iteration.

No transition survives across iterations: the rollout buffer is rebuilt from
scratch every time, so there is no replay.
"""

from __future__ import annotations

import json
import time
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .actor import (
    ActorBatch,
    ActorSpec,
    DualState,
    actor_head,
    clipped_policy_loss,
    dual_update,
    init_actor,
    policy_loss,
)
from .checkpoint import save_arrays
from .config import TrainConfig, config_hash, config_to_dict, run_dir_name
from .critic import (
    CriticBatch,
    CriticParams,
    CriticSpec,
    critic_flat_to_params,
    critic_forward,
    critic_loss,
    critic_params_to_flat,
    init_critic,
)
from .envs import (
    BatchState,
    NormalizerState,
    VectorEnv,
    make_env,
    normalize,
    normalizer_init,
    normalizer_update,
)
from .errors import ConfigurationError, NumericError, SimulationError
from .hl_gauss import HlGaussSpec
from .nets import (
    MlpParams,
    adam_init,
    adam_step,
    clip_grad_norm,
    flat_to_params,
    global_norm,
    params_to_flat,
)
from .returns import TrajectoryTensor, augment_rewards, td_lambda_targets
from .tanh_gaussian import log_prob, rsample

METRICS_COLUMNS = (
    "iteration",
    "env_steps",
    "mean_return",
    "mean_episode_length",
    "critic_loss",
    "actor_loss",
    "mean_entropy",
    "mean_kl",
    "alpha",
    "beta",
    "critic_grad_norm",
    "actor_grad_norm",
)

EVAL_COLUMNS = ("iteration", "env_steps", "mean_return", "mean_episode_length", "success_rate")


@dataclass
class RolloutBatch:
    """One iteration of on-policy experience, every tensor (n_envs, n_steps, ...)."""

    obs: np.ndarray  # normalized observations fed to the behavior policy
    pre_tanh: np.ndarray
    actions: np.ndarray
    behavior_mean: np.ndarray
    behavior_log_std: np.ndarray
    behavior_log_prob: np.ndarray
    rewards_aug: np.ndarray  # env reward plus the frozen-coefficient entropy bonus
    terminated: np.ndarray
    truncated: np.ndarray
    next_values: np.ndarray  # Q at the true successor pair, fresh behavior action
    next_log_prob: np.ndarray
    target_embeddings: np.ndarray  # encoder output at the successor pair, frozen
    targets: np.ndarray | None = None  # lambda returns, filled by compute_targets


@dataclass
class TrainerState:
    actor: MlpParams
    behavior: MlpParams  # frozen copy, synchronized after each iteration
    critic: CriticParams
    duals: DualState
    actor_opt: object
    critic_opt: object
    normalizer: NormalizerState
    env_state: BatchState
    raw_obs: np.ndarray  # current unnormalized observation per env slot
    rng_rollout: np.random.Generator
    rng_next_action: np.random.Generator
    rng_shuffle: np.random.Generator
    rng_loss: np.random.Generator
    iteration: int = 0
    env_steps: int = 0
    ep_return: np.ndarray | None = None  # accumulating raw return per slot
    ep_length: np.ndarray | None = None
    recent_episodes: deque | None = None  # (return, length) of completed episodes


def actor_spec_for(config: TrainConfig) -> ActorSpec:
    spec = config.env_spec
    return ActorSpec(
        obs_dim=spec.obs_dim,
        action_dim=spec.action_dim,
        hidden_dim=config.hidden_dim,
        num_layers=3,
        use_layer_norm=config.use_layer_norm,
    )


def critic_spec_for(config: TrainConfig) -> CriticSpec:
    spec = config.env_spec
    return CriticSpec(
        obs_dim=spec.obs_dim,
        action_dim=spec.action_dim,
        hidden_dim=config.hidden_dim,
        num_bins=config.num_bins,
        use_layer_norm=config.use_layer_norm,
        use_hl_gauss=config.use_hl_gauss,
    )


def init_train_state(config: TrainConfig, env: VectorEnv) -> TrainerState:
    """Build every parameter, optimizer, and RNG stream from the single seed."""
    seq = np.random.SeedSequence(config.seed)
    k_env, k_init, k_roll, k_next, k_shuf, k_loss = seq.spawn(6)
    raw_obs, env_state = env.reset(k_env)

    init_rng = np.random.default_rng(k_init)
    aspec = actor_spec_for(config)
    cspec = critic_spec_for(config)
    actor = init_actor(aspec, init_rng)
    critic = init_critic(cspec, init_rng)

    duals = DualState(
        # a zero start pins the multiplier at exactly 0 (log -inf)
        log_alpha=float(np.log(config.alpha_start)) if config.alpha_start > 0 else float("-inf"),
        log_beta=float(np.log(config.beta_start)) if config.beta_start > 0 else float("-inf"),
        entropy_target=config.entropy_target,
        kl_target=config.kl_target,
        lr_alpha=config.dual_lr,
        # frozen multiplier when the KL term is ablated away
        lr_beta=config.dual_lr if config.use_kl_reg else 0.0,
    )

    normalizer = normalizer_update(normalizer_init(config.env_spec.obs_dim), raw_obs)
    return TrainerState(
        actor=actor,
        behavior=actor.copy(),
        critic=critic,
        duals=duals,
        actor_opt=adam_init(params_to_flat(actor).size),
        critic_opt=adam_init(critic_params_to_flat(critic).size),
        normalizer=normalizer,
        env_state=env_state,
        raw_obs=raw_obs,
        rng_rollout=np.random.default_rng(k_roll),
        rng_next_action=np.random.default_rng(k_next),
        rng_shuffle=np.random.default_rng(k_shuf),
        rng_loss=np.random.default_rng(k_loss),
        ep_return=np.zeros(config.n_envs),
        ep_length=np.zeros(config.n_envs, dtype=np.int64),
        recent_episodes=deque(maxlen=100),
    )


def collect_rollout(state: TrainerState, config: TrainConfig, env: VectorEnv,
                    hl_spec: HlGaussSpec | None) -> RolloutBatch:
    """Roll the behavior policy for n_steps, recording bootstrap quantities.

    Mutates the trainer state in place: environment state, normalizer,
    current observation, episode accounting, and the two sampling streams.
    The entropy bonus uses the multiplier as of now; later dual updates in
    this iteration do not retroactively change the stored rewards.
    """
    aspec = actor_spec_for(config)
    cspec = critic_spec_for(config)
    E, T, d = config.n_envs, config.n_steps, config.env_spec.action_dim

    cols = {name: [] for name in (
        "obs", "pre_tanh", "actions", "b_mean", "b_log_std", "b_log_prob",
        "rewards", "terminated", "truncated", "next_values", "next_log_prob", "psi")}

    for _ in range(T):
        norm_obs = normalize(state.normalizer, state.raw_obs)
        head, _, _ = actor_head(state.behavior, aspec, norm_obs)
        sample = rsample(head, state.rng_rollout.standard_normal((E, d)))
        result, state.env_state = env.step(state.env_state, sample.action)

        # one stats update per produced observation, then the successor pair
        state.normalizer = normalizer_update(state.normalizer, result.final_obs)
        norm_next = normalize(state.normalizer, result.final_obs)
        next_head, _, _ = actor_head(state.behavior, aspec, norm_next)
        next_sample = rsample(next_head, state.rng_next_action.standard_normal((E, d)))
        fwd = critic_forward(state.critic, cspec, hl_spec, norm_next, next_sample.action)

        cols["obs"].append(norm_obs)
        cols["pre_tanh"].append(sample.pre_tanh)
        cols["actions"].append(sample.action)
        cols["b_mean"].append(head.mean)
        cols["b_log_std"].append(head.log_std)
        cols["b_log_prob"].append(sample.log_prob)
        cols["rewards"].append(result.reward)
        cols["terminated"].append(result.terminated)
        cols["truncated"].append(result.truncated)
        cols["next_values"].append(fwd.q)
        cols["next_log_prob"].append(next_sample.log_prob)
        cols["psi"].append(fwd.embedding)

        state.ep_return += result.reward
        state.ep_length += 1
        done = result.terminated | result.truncated
        for i in np.flatnonzero(done):
            state.recent_episodes.append((float(state.ep_return[i]), int(state.ep_length[i])))
            state.ep_return[i] = 0.0
            state.ep_length[i] = 0

        state.raw_obs = result.obs

    def et(key, dtype=None):
        arr = np.stack(cols[key]).swapaxes(0, 1)  # (T, E, ...) -> (E, T, ...)
        return arr.astype(dtype) if dtype is not None else arr

    rewards = et("rewards")
    terminated = et("terminated")
    next_log_prob = et("next_log_prob")
    rewards_aug = augment_rewards(rewards, next_log_prob, float(np.exp(state.duals.log_alpha)),
                                  terminated)
    state.env_steps += E * T
    return RolloutBatch(
        obs=et("obs"),
        pre_tanh=et("pre_tanh"),
        actions=et("actions"),
        behavior_mean=et("b_mean"),
        behavior_log_std=et("b_log_std"),
        behavior_log_prob=et("b_log_prob"),
        rewards_aug=rewards_aug,
        terminated=terminated,
        truncated=et("truncated"),
        next_values=et("next_values"),
        next_log_prob=next_log_prob,
        target_embeddings=et("psi"),
    )


def compute_targets(batch: RolloutBatch, gamma: float, lam: float) -> RolloutBatch:
    """Fill lambda-return targets; time-limit cuts bootstrap through the reward.

    A truncated step has a real successor, so its continuation value is folded
    into the reward and the step is then treated as terminal by the recursion.
    Idempotent: recomputation from the same batch yields identical targets.
    """
    fold = batch.truncated.astype(np.float64)
    rewards_eff = batch.rewards_aug + gamma * batch.next_values * fold
    dones_eff = (batch.terminated | batch.truncated).astype(np.float64)
    traj = TrajectoryTensor(rewards=rewards_eff, next_values=batch.next_values, dones=dones_eff)
    batch.targets = td_lambda_targets(traj, gamma, lam)
    return batch


def train_iteration(state: TrainerState, config: TrainConfig, env: VectorEnv,
                    hl_spec: HlGaussSpec | None) -> dict:
    """One full collect/optimize cycle; returns the metrics row."""
    aspec = actor_spec_for(config)
    cspec = critic_spec_for(config)
    tspec = aspec.trunk_spec()
    try:
        batch = collect_rollout(state, config, env, hl_spec)
        batch = compute_targets(batch, config.gamma, config.td_lambda)

        B = config.batch_size
        mb = config.minibatch_size
        d = config.env_spec.action_dim
        obs_f = batch.obs.reshape(B, -1)
        actions_f = batch.actions.reshape(B, d)
        pre_tanh_f = batch.pre_tanh.reshape(B, d)
        b_mean_f = batch.behavior_mean.reshape(B, d)
        b_log_std_f = batch.behavior_log_std.reshape(B, d)
        b_lp_f = batch.behavior_log_prob.reshape(B)
        targets_f = batch.targets.reshape(B)
        psi_f = batch.target_embeddings.reshape(B, -1)

        actor_loss_fn = policy_loss if config.loss_variant == "lagrangian" else clipped_policy_loss
        sums = {"critic_loss": 0.0, "actor_loss": 0.0, "mean_entropy": 0.0, "mean_kl": 0.0,
                "critic_grad_norm": 0.0, "actor_grad_norm": 0.0}
        n_updates = 0

        for _ in range(config.n_epochs):
            perm = state.rng_shuffle.permutation(B)
            for k in range(config.n_minibatches):
                idx = perm[k * mb:(k + 1) * mb]

                cbatch = CriticBatch(obs=obs_f[idx], actions=actions_f[idx],
                                     targets=targets_f[idx], target_embeddings=psi_f[idx])
                closs, cgrads, _ = critic_loss(state.critic, cspec, hl_spec, cbatch,
                                               config.effective_aux_mult)
                cflat = critic_params_to_flat(cgrads)
                cnorm = global_norm(cflat)
                cflat = clip_grad_norm(cflat, config.max_grad_norm)
                new_c, state.critic_opt = adam_step(
                    state.critic_opt, critic_params_to_flat(state.critic), cflat, config.lr)
                state.critic = critic_flat_to_params(new_c, cspec)

                abatch = ActorBatch(obs=obs_f[idx], behavior_mean=b_mean_f[idx],
                                    behavior_log_std=b_log_std_f[idx],
                                    behavior_pre_tanh=pre_tanh_f[idx],
                                    behavior_log_prob=b_lp_f[idx])
                noise = state.rng_loss.standard_normal((mb, d))
                aloss, agrads, astats = actor_loss_fn(
                    state.actor, aspec, state.critic, cspec, hl_spec, abatch,
                    state.duals, noise, use_kl=config.use_kl_reg)
                aflat = params_to_flat(agrads)
                anorm = global_norm(aflat)
                aflat = clip_grad_norm(aflat, config.max_grad_norm)
                new_a, state.actor_opt = adam_step(
                    state.actor_opt, params_to_flat(state.actor), aflat, config.lr)
                state.actor = flat_to_params(new_a, tspec)

                state.duals = dual_update(state.duals, astats.mean_entropy, astats.mean_kl)

                sums["critic_loss"] += closs
                sums["actor_loss"] += aloss
                sums["mean_entropy"] += astats.mean_entropy
                sums["mean_kl"] += astats.mean_kl
                sums["critic_grad_norm"] += cnorm
                sums["actor_grad_norm"] += anorm
                n_updates += 1

        state.behavior = state.actor.copy()
        state.iteration += 1
    except (NumericError, SimulationError) as e:
        raise type(e)(
            f"{e} [iteration {state.iteration}, seed {config.seed}, "
            f"config {config_hash(config)}]"
        ) from e

    if state.recent_episodes:
        rets = [r for r, _ in state.recent_episodes]
        lens = [l for _, l in state.recent_episodes]
        mean_return, mean_length = float(np.mean(rets)), float(np.mean(lens))
    else:
        mean_return, mean_length = float("nan"), float("nan")
    return {
        "iteration": state.iteration,
        "env_steps": state.env_steps,
        "mean_return": mean_return,
        "mean_episode_length": mean_length,
        "critic_loss": sums["critic_loss"] / n_updates,
        "actor_loss": sums["actor_loss"] / n_updates,
        "mean_entropy": sums["mean_entropy"] / n_updates,
        "mean_kl": sums["mean_kl"] / n_updates,
        "alpha": state.duals.alpha,
        "beta": state.duals.beta,
        "critic_grad_norm": sums["critic_grad_norm"] / n_updates,
        "actor_grad_norm": sums["actor_grad_norm"] / n_updates,
    }


def evaluate(actor: MlpParams, normalizer: NormalizerState, config: TrainConfig,
             eval_seed) -> dict:
    """Deterministic-mean policy over eval_episodes parallel episodes.

    The normalizer is frozen: evaluation never touches the running stats.
    """
    if config.eval_episodes <= 0:
        raise ConfigurationError("eval_episodes must be positive")
    aspec = actor_spec_for(config)
    env = make_env(config.env, config.eval_episodes)
    raw_obs, env_state = env.reset(eval_seed)
    n = config.eval_episodes
    returns = np.zeros(n)
    lengths = np.zeros(n, dtype=np.int64)
    finished = np.zeros(n, dtype=bool)
    succeeded = np.zeros(n, dtype=bool)
    for _ in range(config.env_spec.episode_length):
        head, _, _ = actor_head(actor, aspec, normalize(normalizer, raw_obs))
        result, env_state = env.step(env_state, np.tanh(head.mean))
        active = ~finished
        returns[active] += result.reward[active]
        lengths[active] += 1
        succeeded |= active & result.terminated
        finished |= active & (result.terminated | result.truncated)
        raw_obs = result.obs
        if finished.all():
            break
    return {
        "mean_return": float(np.mean(returns)),
        "mean_episode_length": float(np.mean(lengths)),
        "success_rate": float(np.mean(succeeded)),
    }


def eval_seed_for(config_seed: int, iteration: int) -> np.random.SeedSequence:
    # a fixed tag keeps evaluation draws out of every training stream
    return np.random.SeedSequence(entropy=(config_seed, 0x5EED_E7A1, iteration))


def reliable_fraction(curves: np.ndarray, tau: float) -> np.ndarray:
    """Per-timestep fraction of seeds currently holding a sustained level >= tau.

    A seed counts at time t when some window [t0, t] stays at or above tau.
    Taking t0 = t shows this is exactly curve(t) >= tau: a sustained window
    ending now exists precisely when the current value clears the threshold,
    so the fraction is computed pointwise.
    """
    curves = np.asarray(curves, dtype=np.float64)
    if curves.ndim != 2:
        raise ConfigurationError(f"expected curves of shape (n_seeds, n_points), got {curves.shape}")
    return np.mean(curves >= tau, axis=0)


def _format_cell(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    # repr round-trips float64 exactly, so identical runs give identical bytes
    return repr(float(value))


def write_csv(path: Path, columns: tuple, rows: list) -> None:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_format_cell(row[c]) for c in columns))
    path.write_text("\n".join(lines) + "\n")


def train(config: TrainConfig, out_dir: str | Path) -> Path:
    """Full training run; returns the per-run directory it wrote.

    Artifacts: manifest.json (config echo + hash + paths), metrics.csv (one
    deterministic row per iteration), eval.csv (held-out deterministic-policy
    evaluations), summary.json (final/best results and wall time, the only
    place timing lives), checkpoint.npz.
    """
    run_dir = Path(out_dir) / run_dir_name(config)
    run_dir.mkdir(parents=True, exist_ok=True)
    started = time.time()

    manifest = {
        "config": config_to_dict(config),
        "config_hash": config_hash(config),
        "seed": config.seed,
        "started_at": time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime(started)),
        "artifacts": {
            "metrics": "metrics.csv",
            "eval": "eval.csv",
            "summary": "summary.json",
            "checkpoint": "checkpoint.npz",
        },
    }
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")

    env = make_env(config.env, config.n_envs)
    hl = config.hl_spec() if config.use_hl_gauss else None
    state = init_train_state(config, env)

    metrics_rows = []
    eval_rows = []

    def run_eval():
        scores = evaluate(state.actor, state.normalizer, config,
                          eval_seed_for(config.seed, state.iteration))
        eval_rows.append({"iteration": state.iteration, "env_steps": state.env_steps, **scores})

    run_eval()  # untrained baseline
    for it in range(config.n_iterations):
        metrics_rows.append(train_iteration(state, config, env, hl))
        if state.iteration % config.eval_interval == 0 or it == config.n_iterations - 1:
            run_eval()

    write_csv(run_dir / "metrics.csv", METRICS_COLUMNS, metrics_rows)
    write_csv(run_dir / "eval.csv", EVAL_COLUMNS, eval_rows)

    eval_returns = [row["mean_return"] for row in eval_rows]
    summary = {
        "config": config_to_dict(config),
        "config_hash": config_hash(config),
        "seed": config.seed,
        "wall_seconds": time.time() - started,
        "env_steps": state.env_steps,
        "iterations": state.iteration,
        "final_eval_return": eval_returns[-1],
        "best_eval_return": max(eval_returns),
        "final_success_rate": eval_rows[-1]["success_rate"],
        "best_success_rate": max(row["success_rate"] for row in eval_rows),
        "eval_env_steps": [row["env_steps"] for row in eval_rows],
        "eval_returns": eval_returns,
        "eval_success_rates": [row["success_rate"] for row in eval_rows],
    }
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")

    save_arrays(run_dir / "checkpoint.npz", {
        "actor_flat": params_to_flat(state.actor),
        "behavior_flat": params_to_flat(state.behavior),
        "critic_flat": critic_params_to_flat(state.critic),
        "log_alpha": np.float64(state.duals.log_alpha),
        "log_beta": np.float64(state.duals.log_beta),
        "normalizer_mean": state.normalizer.mean,
        "normalizer_m2": state.normalizer.m2,
        "normalizer_count": np.float64(state.normalizer.count),
        "env_steps": np.int64(state.env_steps),
        "iteration": np.int64(state.iteration),
    })
    return run_dir
