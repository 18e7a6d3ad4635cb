"""Single state-action critic with a categorical head and a latent self-prediction task.

The critic is one encoder over the concatenated (observation, action) pair,
a head that emits histogram logits over the value support, and a predictor
that regresses the embedding of the next state-action pair. There is no twin
critic and no target network; the stale-value problem is handled upstream by
on-policy targets, not by parameter averaging.

Setting ``use_hl_gauss=False`` switches the head to a single scalar output
trained with squared error, which keeps the rest of the pipeline unchanged
for ablations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError, NumericError
from .hl_gauss import HlGaussSpec, hl_cross_entropy, project_target, softmax
from .nets import MlpParams, MlpSpec, flat_to_params, init_mlp, mlp_backward, mlp_forward, params_to_flat


@dataclass(frozen=True)
class CriticSpec:
    obs_dim: int
    action_dim: int
    hidden_dim: int
    num_bins: int
    use_layer_norm: bool = True
    use_hl_gauss: bool = True
    encoder_layers: int = 2
    head_layers: int = 2
    predictor_layers: int = 2

    def encoder_spec(self) -> MlpSpec:
        # embedding width matches hidden_dim
        return MlpSpec(
            input_dim=self.obs_dim + self.action_dim,
            hidden_dim=self.hidden_dim,
            output_dim=self.hidden_dim,
            num_layers=self.encoder_layers,
            use_layer_norm=self.use_layer_norm,
        )

    def head_spec(self) -> MlpSpec:
        return MlpSpec(
            input_dim=self.hidden_dim,
            hidden_dim=self.hidden_dim,
            output_dim=self.num_bins if self.use_hl_gauss else 1,
            num_layers=self.head_layers,
            use_layer_norm=self.use_layer_norm,
        )

    def predictor_spec(self) -> MlpSpec:
        return MlpSpec(
            input_dim=self.hidden_dim,
            hidden_dim=self.hidden_dim,
            output_dim=self.hidden_dim,
            num_layers=self.predictor_layers,
            use_layer_norm=self.use_layer_norm,
        )


@dataclass
class CriticParams:
    encoder: MlpParams
    head: MlpParams
    predictor: MlpParams

    def copy(self) -> "CriticParams":
        return CriticParams(self.encoder.copy(), self.head.copy(), self.predictor.copy())


def init_critic(spec: CriticSpec, rng: np.random.Generator) -> CriticParams:
    return CriticParams(
        encoder=init_mlp(spec.encoder_spec(), rng),
        head=init_mlp(spec.head_spec(), rng),
        predictor=init_mlp(spec.predictor_spec(), rng),
    )


def critic_params_to_flat(params: CriticParams) -> np.ndarray:
    return np.concatenate(
        [params_to_flat(params.encoder), params_to_flat(params.head), params_to_flat(params.predictor)]
    )


def critic_flat_to_params(flat: np.ndarray, spec: CriticSpec) -> CriticParams:
    sizes = [spec.encoder_spec().num_params(), spec.head_spec().num_params(), spec.predictor_spec().num_params()]
    if flat.shape != (sum(sizes),):
        raise ConfigurationError(f"expected critic flat vector of length {sum(sizes)}, got {flat.shape}")
    a, b = sizes[0], sizes[0] + sizes[1]
    return CriticParams(
        encoder=flat_to_params(flat[:a], spec.encoder_spec()),
        head=flat_to_params(flat[a:b], spec.head_spec()),
        predictor=flat_to_params(flat[b:], spec.predictor_spec()),
    )


class CriticForward(NamedTuple):
    embedding: np.ndarray
    logits: np.ndarray
    q: np.ndarray
    caches: tuple[list, list]  # (encoder cache, head cache) for backward sweeps


def _values_from_logits(logits: np.ndarray, spec: CriticSpec, hl_spec: HlGaussSpec | None) -> np.ndarray:
    if spec.use_hl_gauss:
        if hl_spec is None:
            raise ConfigurationError("hl_spec required when use_hl_gauss is set")
        return (softmax(logits) * hl_spec.bin_centers()).sum(axis=-1)
    return logits[:, 0]


def critic_forward(
    params: CriticParams,
    spec: CriticSpec,
    hl_spec: HlGaussSpec | None,
    obs: np.ndarray,
    actions: np.ndarray,
) -> CriticForward:
    """Embedding, value logits, and scalar value estimate for a batch of pairs."""
    obs = np.asarray(obs, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    if obs.ndim != 2 or obs.shape[1] != spec.obs_dim:
        raise ConfigurationError(f"expected obs of shape (batch, {spec.obs_dim}), got {obs.shape}")
    if actions.shape != (obs.shape[0], spec.action_dim):
        raise ConfigurationError(
            f"expected actions of shape ({obs.shape[0]}, {spec.action_dim}), got {actions.shape}"
        )
    x = np.concatenate([obs, actions], axis=1)
    embedding, enc_cache = mlp_forward(params.encoder, spec.encoder_spec(), x)
    logits, head_cache = mlp_forward(params.head, spec.head_spec(), embedding)
    q = _values_from_logits(logits, spec, hl_spec)
    return CriticForward(embedding=embedding, logits=logits, q=q, caches=(enc_cache, head_cache))


def target_embedding(
    params: CriticParams, spec: CriticSpec, obs_next: np.ndarray, actions_next: np.ndarray
) -> np.ndarray:
    """Self-prediction target psi: encoder output for the successor pair, no gradient."""
    obs_next = np.asarray(obs_next, dtype=np.float64)
    actions_next = np.asarray(actions_next, dtype=np.float64)
    x = np.concatenate([obs_next, actions_next], axis=1)
    embedding, _ = mlp_forward(params.encoder, spec.encoder_spec(), x)
    return embedding


@dataclass
class CriticBatch:
    obs: np.ndarray
    actions: np.ndarray
    targets: np.ndarray  # scalar lambda returns, (batch,)
    target_embeddings: np.ndarray  # psi, (batch, hidden_dim), frozen


def critic_loss(
    params: CriticParams,
    spec: CriticSpec,
    hl_spec: HlGaussSpec | None,
    batch: CriticBatch,
    aux_mult: float,
) -> tuple[float, CriticParams, dict]:
    """Value regression plus the latent self-prediction term; returns exact grads.

    loss = mean_i CE(head(enc(x_i, a_i)), project(G_i))
         + aux_mult * mean_i || predictor(enc(x_i, a_i)) - psi_i ||^2

    With ``use_hl_gauss=False`` the first term is mean squared error on the
    scalar head output. Gradients cover encoder, head, and predictor; psi is
    a constant.
    """
    n = batch.obs.shape[0]
    if batch.targets.shape != (n,):
        raise ConfigurationError(f"expected targets of shape ({n},), got {batch.targets.shape}")
    fwd = critic_forward(params, spec, hl_spec, batch.obs, batch.actions)
    enc_cache, head_cache = fwd.caches

    if spec.use_hl_gauss:
        target_probs = project_target(batch.targets, hl_spec)
        ce_rows, d_logits = hl_cross_entropy(fwd.logits, target_probs)
        value_loss = float(np.mean(ce_rows))
        d_logits = d_logits / n
    else:
        err = fwd.logits[:, 0] - batch.targets
        value_loss = float(np.mean(err * err))
        d_logits = (2.0 / n) * err[:, None]

    head_grads, d_emb = mlp_backward(params.head, spec.head_spec(), head_cache, d_logits)

    if aux_mult != 0.0:
        if batch.target_embeddings.shape != fwd.embedding.shape:
            raise ConfigurationError("target embeddings do not match encoder output shape")
        pred, pred_cache = mlp_forward(params.predictor, spec.predictor_spec(), fwd.embedding)
        diff = pred - batch.target_embeddings
        aux_loss = float(np.mean(np.sum(diff * diff, axis=1)))
        pred_grads, d_emb_aux = mlp_backward(
            params.predictor, spec.predictor_spec(), pred_cache, (2.0 * aux_mult / n) * diff
        )
        d_emb = d_emb + d_emb_aux
    else:
        aux_loss = 0.0
        pred_spec = spec.predictor_spec()
        zeros = np.zeros(pred_spec.num_params())
        pred_grads = flat_to_params(zeros, pred_spec)

    enc_grads, _ = mlp_backward(params.encoder, spec.encoder_spec(), enc_cache, d_emb)

    loss = value_loss + aux_mult * aux_loss
    if not np.isfinite(loss):
        raise NumericError("critic loss is non-finite")
    grads = CriticParams(encoder=enc_grads, head=head_grads, predictor=pred_grads)
    stats = {"value_loss": value_loss, "aux_loss": aux_loss, "mean_q": float(np.mean(fwd.q))}
    return loss, grads, stats
