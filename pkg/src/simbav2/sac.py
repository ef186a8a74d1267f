"""Soft actor-critic objectives and the full update step."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .distributional import ReturnSupport, categorical_project, kl_critic_loss_from_logits
from .errors import ConfigError, NumericError
from .hypersphere import project_weights_inplace
from .module import Module, Parameter, frozen
from .network import Actor, Critic, EncoderConfig, actor_sample
from .normalizers import RunningStat, rsnorm_apply
from .optim import Adam
from .tensor import Tensor, no_grad


@dataclass(frozen=True)
class SacConfig:
    gamma: float = 0.99
    tau: float = 5e-3
    clipped_double_q: bool = True
    distributional: bool = True
    target_entropy: float = -0.5
    init_temperature: float = 1e-2
    betas: tuple[float, float] = (0.9, 0.999)
    bc_lambda: float = 0.0
    hard_target: bool = False
    hard_target_period: int = 200


@dataclass
class Batch:
    obs: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_obs: np.ndarray
    terminated: np.ndarray
    dataset_action: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.reward)


class SacState:
    """Networks, temperature, optimizers and the shared observation statistics."""

    def __init__(
        self,
        actor_cfg: EncoderConfig,
        critic_cfg: EncoderConfig,
        action_dim: int,
        support: ReturnSupport,
        cfg: SacConfig,
        seed: int = 0,
    ):
        seeds = np.random.SeedSequence(seed).spawn(4)
        self.cfg = cfg
        self.support = support
        self.action_dim = action_dim
        self.actor = Actor(actor_cfg, action_dim, np.random.default_rng(seeds[0]))
        n_critics = 2 if cfg.clipped_double_q else 1
        critic_rng = np.random.default_rng(seeds[1])
        self.critics = [Critic(critic_cfg, support, critic_rng, cfg.distributional) for _ in range(n_critics)]
        self.target_critics = [Critic(critic_cfg, support, critic_rng, cfg.distributional) for _ in range(n_critics)]
        for tgt, src in zip(self.target_critics, self.critics):
            tgt.load_state_dict(src.state_dict())
        self.log_alpha = Parameter(np.array(math.log(cfg.init_temperature)))
        self.obs_rms = RunningStat.zeros(critic_cfg.obs_dim - action_dim)
        self.rng = np.random.default_rng(seeds[2])
        self.actor_opt = Adam(self.actor.parameters(), cfg.betas)
        self.critic_opt = Adam([p for c in self.critics for p in c.parameters()], cfg.betas)
        self.alpha_opt = Adam([self.log_alpha], cfg.betas)
        self.updates = 0
        self._constrained = [p for m in (self.actor, *self.critics) for p in m.parameters() if p.unit_rows]
        self._target_pairs = [
            list(zip(t.parameters(), c.parameters())) for t, c in zip(self.target_critics, self.critics)
        ]

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha.data))

    def normalize(self, obs) -> np.ndarray:
        return rsnorm_apply(self.obs_rms, obs)

    def constrained(self) -> list[Parameter]:
        return list(self._constrained)

    def target_pairs(self) -> list[tuple[Parameter, Parameter]]:
        """(target, online) parameter pairs across all critics."""
        return [pair for pairs in self._target_pairs for pair in pairs]

    def modules(self) -> dict[str, Module]:
        out: dict[str, Module] = {"actor": self.actor}
        for i, (c, t) in enumerate(zip(self.critics, self.target_critics)):
            out[f"critic{i}"] = c
            out[f"target{i}"] = t
        return out


# ------------------------------------------------------------------ objectives
def _min_q(critics, o_bar, action, features=None) -> tuple[list, Tensor]:
    outs = [c(o_bar, action, features if i == 0 else None) for i, c in enumerate(critics)]
    q = outs[0][1]
    for _, qi in outs[1:]:
        q = T.minimum(q, qi)
    return outs, q


def critic_target_dist(batch: Batch, state: SacState, o_bar=None, next_bar=None, noise=None) -> np.ndarray:
    """Projected categorical TD target, one row per transition.

    Atom values are ``r + (1 - terminated) * gamma * (delta_i - alpha * log pi(a'|o'))``
    with ``a' ~ pi(.|o')``; under clipped double Q the target distribution of the
    target critic with the lower expected value is used.
    """
    cfg, support = state.cfg, state.support
    next_bar = state.normalize(batch.next_obs) if next_bar is None else next_bar
    if noise is None:
        noise = state.rng.standard_normal((len(batch), state.action_dim))
    with no_grad():
        mean, log_std = state.actor(next_bar)
        next_action, next_logp = actor_sample(mean, log_std, noise)
        outs = [c(next_bar, next_action) for c in state.target_critics]
    probs = outs[0][0].data
    if len(outs) > 1:
        q = np.stack([o[1].data for o in outs])
        pick = np.argmin(q, axis=0)
        probs = np.where((pick == 0)[:, None], outs[0][0].data, outs[1][0].data)
    alpha = state.alpha
    bootstrap = (1.0 - batch.terminated) * cfg.gamma
    values = batch.reward[:, None] + bootstrap[:, None] * (support.atoms[None, :] - alpha * next_logp.data[:, None])
    return categorical_project(support, values, probs)


def mse_target(batch: Batch, state: SacState, next_bar=None, noise=None) -> np.ndarray:
    """Scalar Bellman target r + (1 - terminated) * gamma * (Q_target(o', a') - alpha log pi)."""
    next_bar = state.normalize(batch.next_obs) if next_bar is None else next_bar
    if noise is None:
        noise = state.rng.standard_normal((len(batch), state.action_dim))
    with no_grad():
        mean, log_std = state.actor(next_bar)
        next_action, next_logp = actor_sample(mean, log_std, noise)
        q = np.min(np.stack([c(next_bar, next_action)[1].data for c in state.target_critics]), axis=0)
    return batch.reward + (1.0 - batch.terminated) * state.cfg.gamma * (q - state.alpha * next_logp.data)


def critic_loss(batch: Batch, state: SacState, o_bar, next_bar, features=None, noise=None) -> Tensor:
    if state.cfg.distributional:
        target = critic_target_dist(batch, state, o_bar, next_bar, noise)
        loss = None
        for i, c in enumerate(state.critics):
            logits = c.logits(o_bar, batch.action, features if i == 0 else None)
            li = kl_critic_loss_from_logits(logits, target)
            loss = li if loss is None else loss + li
        return loss
    y = mse_target(batch, state, next_bar, noise)
    loss = None
    for i, c in enumerate(state.critics):
        _, q = c(o_bar, batch.action, features if i == 0 else None)
        li = T.tmean(T.square(q - y))
        loss = li if loss is None else loss + li
    return loss


def actor_loss(batch: Batch, state: SacState, alpha: float, o_bar=None, noise=None, features=None):
    """Mean of ``alpha * log pi(a|o) - min_k Q_k(o, a)`` with ``a`` reparameterized.

    Returns (loss, log_prob array, mean Q array, sampled action tensor).
    """
    o_bar = state.normalize(batch.obs) if o_bar is None else o_bar
    if noise is None:
        noise = state.rng.standard_normal((len(batch), state.action_dim))
    mean, log_std = state.actor(o_bar, features)
    action, log_prob = actor_sample(mean, log_std, noise)
    _, q = _min_q(state.critics, o_bar, action)
    loss = T.tmean(alpha * log_prob - q)
    return loss, log_prob.data, q.data, action


def temperature_loss(log_alpha, log_probs, target_entropy: float) -> Tensor:
    """Mean of ``-exp(log_alpha) * (log pi + target_entropy)``; log pi is a constant."""
    log_alpha = T.as_tensor(log_alpha)
    slack = float(np.mean(np.asarray(log_probs) + target_entropy))
    return -(T.exp(log_alpha) * slack)


def bc_actor_loss(batch: Batch, state: SacState, alpha: float, lam: float, o_bar=None, noise=None,
                  q_scale: float | None = None):
    """Actor loss plus ``lam * |mean Q| * mean((pi(o) - a_data)^2)``.

    The Q-magnitude weight is detached; ``pi(o)`` is the same reparameterized
    action fed to the critics. ``q_scale`` pins ``|mean Q|`` to a given value.
    """
    loss, logp, q, action = actor_loss(batch, state, alpha, o_bar, noise)
    if lam == 0.0:
        return loss, logp, q, action
    if batch.dataset_action is None:
        raise ConfigError("behaviour-cloning loss needs dataset actions in the batch")
    weight = lam * (abs(float(np.mean(q))) if q_scale is None else q_scale)
    diff = action - batch.dataset_action
    bc = T.tmean(T.tsum(T.square(diff), axis=-1))
    return loss + weight * bc, logp, q, action


def ema_update(target: Module, online: Module, tau: float) -> None:
    """target <- (1 - tau) target + tau online, then re-project unit-row weights."""
    _ema_pairs(list(zip(target.parameters(), online.parameters())), tau)


def _ema_pairs(pairs, tau: float) -> None:
    if not 0.0 < tau <= 1.0:
        raise ConfigError(f"tau must lie in (0, 1], got {tau}")
    for tp, op in pairs:
        if tau == 1.0:
            # the online rows are already unit norm, so a plain copy suffices
            tp.data = op.data.copy()
            continue
        tp.data *= 1.0 - tau
        tp.data += tau * op.data
        if tp.unit_rows:
            project_weights_inplace(tp.data)


# ----------------------------------------------------------------- update step
def _check_finite(name: str, loss: Tensor, state: SacState) -> None:
    value = float(loss.data)
    if not math.isfinite(value):
        err = NumericError(f"non-finite {name} loss at update {state.updates}")
        err.record = {"loss": name, "value": value, "update": state.updates, "alpha": state.alpha}
        raise err


def train_step(state: SacState, batch: Batch, lr: float, telemetry_hook=None, feature_sink=None) -> dict:
    """One critic, actor and temperature update followed by projection and target sync.

    ``telemetry_hook(state, features)`` runs right after the critic backward
    pass, before any parameter moves. ``feature_sink`` (a list) receives every
    intermediate feature array produced by the online networks.
    """
    cfg = state.cfg
    o_bar = state.normalize(batch.obs)
    next_bar = state.normalize(batch.next_obs)
    want_feats = telemetry_hook is not None or feature_sink is not None

    # critic
    feats = [] if want_feats else None
    state.critic_opt.zero_grad()
    c_loss = critic_loss(batch, state, o_bar, next_bar, feats)
    _check_finite("critic", c_loss, state)
    c_loss.backward()
    if telemetry_hook is not None:
        telemetry_hook(state, feats)
    state.critic_opt.step(lr)

    # actor
    actor_feats = [] if feature_sink is not None else None
    state.actor_opt.zero_grad()
    with frozen(*state.critics):
        if cfg.bc_lambda > 0.0:
            a_loss, logp, _, _ = bc_actor_loss(batch, state, state.alpha, cfg.bc_lambda, o_bar)
        else:
            a_loss, logp, _, _ = actor_loss(batch, state, state.alpha, o_bar, features=actor_feats)
        _check_finite("actor", a_loss, state)
        # still frozen: the critics' weight gradients are never formed
        a_loss.backward()
    state.actor_opt.step(lr)

    # temperature
    state.alpha_opt.zero_grad()
    t_loss = temperature_loss(state.log_alpha, logp, cfg.target_entropy)
    t_loss.backward()
    state.alpha_opt.step(lr)

    for p in state._constrained:
        project_weights_inplace(p.data)

    state.updates += 1
    if cfg.hard_target:
        if state.updates % cfg.hard_target_period == 0:
            _ema_pairs(state.target_pairs(), 1.0)
    else:
        _ema_pairs(state.target_pairs(), cfg.tau)

    if feature_sink is not None:
        feature_sink.extend(feats)
        feature_sink.extend(actor_feats)
    return {
        "critic_loss": float(c_loss.data),
        "actor_loss": float(a_loss.data),
        "alpha": state.alpha,
        "entropy": -float(np.mean(logp)),
    }
