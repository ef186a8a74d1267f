"""Replay buffer, training configuration, ablation flags and the UTD training loop."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .distributional import make_atoms
from .envs import ENVS, make_env
from .errors import ConfigError, NumericError, UsageError
from .network import EncoderConfig, actor_sample, deterministic_action
from .normalizers import RewardScalerState, reward_scaler_step, rsnorm_update
from .sac import Batch, SacConfig, SacState, train_step
from .telemetry import TelemetryRecord, TelemetryWriter, record
from .tensor import no_grad

METRIC_COLUMNS = ("env_step", "eval_return_mean", "eval_return_std", "alpha", "lr")


# ------------------------------------------------------------------ replay
@dataclass
class Transition:
    obs: np.ndarray
    action: np.ndarray
    scaled_reward: float
    next_obs: np.ndarray
    terminated: bool
    truncated: bool


class ReplayBuffer:
    """Fixed-capacity ring of transitions with uniform sampling."""

    def __init__(self, obs_dim: int, action_dim: int, capacity: int = 1_000_000):
        if capacity < 1:
            raise ConfigError(f"buffer capacity must be >= 1, got {capacity}")
        self.capacity = int(capacity)
        self.obs_dim, self.action_dim = obs_dim, action_dim
        self.obs = np.zeros((capacity, obs_dim))
        self.action = np.zeros((capacity, action_dim))
        self.reward = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.terminated = np.zeros(capacity)
        self.truncated = np.zeros(capacity)
        self.size = 0
        self.cursor = 0

    def __len__(self) -> int:
        return self.size

    def add(self, t: Transition) -> None:
        i = self.cursor
        obs = np.asarray(t.obs, dtype=np.float64)
        action = np.asarray(t.action, dtype=np.float64)
        if obs.shape != (self.obs_dim,) or action.shape != (self.action_dim,):
            raise UsageError(f"transition shapes {obs.shape}, {action.shape} do not match the buffer")
        self.obs[i] = obs
        self.action[i] = action
        self.reward[i] = t.scaled_reward
        self.next_obs[i] = t.next_obs
        self.terminated[i] = float(t.terminated)
        self.truncated[i] = float(t.truncated)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.size == 0:
            raise UsageError("cannot sample from an empty buffer")
        return rng.integers(0, self.size, size=n)

    def sample(self, rng: np.random.Generator, n: int) -> Batch:
        idx = self.sample_indices(rng, n)
        return Batch(self.obs[idx], self.action[idx], self.reward[idx], self.next_obs[idx], self.terminated[idx])

    def arrays(self) -> dict[str, np.ndarray]:
        n = self.size
        return {
            "buffer.obs": self.obs[:n].copy(),
            "buffer.action": self.action[:n].copy(),
            "buffer.reward": self.reward[:n].copy(),
            "buffer.next_obs": self.next_obs[:n].copy(),
            "buffer.terminated": self.terminated[:n].copy(),
            "buffer.truncated": self.truncated[:n].copy(),
            "buffer.meta": np.array([float(self.size), float(self.cursor)]),
        }

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        size, cursor = (int(v) for v in arrays["buffer.meta"])
        for name in ("obs", "action", "reward", "next_obs", "terminated", "truncated"):
            getattr(self, name)[:size] = arrays[f"buffer.{name}"]
        self.size, self.cursor = size, cursor


# ------------------------------------------------------------------ config
@dataclass(frozen=True)
class TrainConfig:
    env: str = "pendulum"
    seed: int = 0
    total_steps: int = 1_000_000
    learning_starts: int = 5000
    utd: int = 2
    batch_size: int = 256
    buffer_capacity: int = 1_000_000
    lr_init: float = 1e-4
    lr_final: float = 3e-5
    beta1: float = 0.9
    beta2: float = 0.999
    gamma: float = 0.99
    tau: float = 5e-3
    n_atom: int = 101
    g_min: float = -5.0
    g_max: float = 5.0
    c_shift: float = 3.0
    actor_d_h: int = 128
    actor_blocks: int = 1
    critic_d_h: int = 512
    critic_blocks: int = 2
    init_temperature: float = 1e-2
    # -|A|/2 when left at nan
    target_entropy: float = math.nan
    # "auto" follows the environment's failure-termination flag
    clipped_double_q: str = "auto"
    reward_eps: float = 1e-8
    eval_interval: int = 5000
    eval_episodes: int = 10
    telemetry_interval: int = 100
    checkpoint_interval: int = 0
    bc_lambda: float = 0.0
    hard_target_period: int = 200
    # design dimensions switched by ablation flags
    no_l2: bool = False
    no_shift: bool = False
    resize_projection: bool = False
    use_layernorm: bool = False
    distributional: bool = True
    reward_scaling: bool = True
    reward_bounding: bool = True
    hard_target: bool = False
    scaler_init: float = math.nan
    scaler_scale: float = math.nan
    alpha_init: float = math.nan
    alpha_scale: float = math.nan

    def __post_init__(self):
        validate(self)

    @property
    def env_spec(self):
        return ENVS[self.env].spec

    def use_clipped_double_q(self) -> bool:
        if self.clipped_double_q == "auto":
            return self.env_spec.has_failure_termination
        return self.clipped_double_q == "true"

    def resolved_target_entropy(self) -> float:
        if math.isnan(self.target_entropy):
            return -0.5 * self.env_spec.action_dim
        return self.target_entropy

    def digest(self) -> str:
        return hashlib.sha256(dump_config(self).encode()).hexdigest()


# Desk-scale preset: Table 8 values except network widths/depth and run length,
# sized so a 30k-step pendulum run fits in a few minutes on one CPU core.
DESK_OVERRIDES = {
    "total_steps": 30_000,
    "actor_d_h": 16,
    "critic_d_h": 16,
    "critic_blocks": 1,
    "eval_interval": 5000,
}


def desk_config(**overrides) -> TrainConfig:
    return replace(TrainConfig(), **{**DESK_OVERRIDES, **overrides})


def validate(cfg: TrainConfig) -> None:
    if cfg.env not in ENVS:
        raise ConfigError(f"unknown env {cfg.env!r}; choose from {sorted(ENVS)}")
    positive = ("total_steps", "batch_size", "buffer_capacity", "n_atom", "actor_d_h", "actor_blocks",
                "critic_d_h", "critic_blocks", "eval_interval", "eval_episodes", "telemetry_interval",
                "hard_target_period")
    for name in positive:
        if getattr(cfg, name) < 1:
            raise ConfigError(f"{name} must be >= 1, got {getattr(cfg, name)}")
    for name in ("learning_starts", "utd", "checkpoint_interval", "lr_init", "lr_final", "bc_lambda"):
        if getattr(cfg, name) < 0:
            raise ConfigError(f"{name} must be >= 0, got {getattr(cfg, name)}")
    if cfg.n_atom < 2:
        raise ConfigError("n_atom must be >= 2")
    if not cfg.g_max > cfg.g_min:
        raise ConfigError("g_max must exceed g_min")
    if not 0.0 <= cfg.gamma < 1.0:
        raise ConfigError(f"gamma must lie in [0, 1), got {cfg.gamma}")
    if not 0.0 < cfg.tau <= 1.0:
        raise ConfigError(f"tau must lie in (0, 1], got {cfg.tau}")
    if cfg.c_shift <= 0:
        raise ConfigError(f"c_shift must be positive, got {cfg.c_shift}")
    if cfg.init_temperature <= 0:
        raise ConfigError("init_temperature must be positive")
    if not (0.0 <= cfg.beta1 < 1.0 and 0.0 <= cfg.beta2 < 1.0):
        raise ConfigError("Adam betas must lie in [0, 1)")
    if cfg.clipped_double_q not in ("auto", "true", "false"):
        raise ConfigError("clipped_double_q must be auto, true or false")


def _parse_value(kind, text: str):
    text = text.strip()
    if kind is bool or kind == "bool":
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {text!r}")
    if kind is int or kind == "int":
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"not an integer: {text!r}") from None
    if kind is float or kind == "float":
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"not a number: {text!r}") from None
    return text


_FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def parse_overrides(pairs: dict[str, str], base: TrainConfig | None = None) -> TrainConfig:
    base = base or TrainConfig()
    changes = {}
    for key, text in pairs.items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        changes[key] = _parse_value(_FIELD_TYPES[key], text)
    return replace(base, **changes)


def parse_config_text(text: str, base: TrainConfig | None = None) -> TrainConfig:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value
    return parse_overrides(pairs, base)


def load_config(path) -> TrainConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text())


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(cfg: TrainConfig) -> str:
    return "".join(f"{f.name} = {_format_value(getattr(cfg, f.name))}\n" for f in fields(cfg))


# ------------------------------------------------------------------ ablations
ABLATIONS: dict[str, dict] = {
    "no_l2": {"no_l2": True},
    "no_shift": {"no_shift": True},
    "c_shift_1": {"c_shift": 1.0},
    "resize_projection": {"resize_projection": True},
    "mse_loss": {"distributional": False},
    "no_reward_scaling": {"reward_scaling": False},
    "no_reward_bounding": {"reward_bounding": False},
    "hard_target": {"hard_target": True},
    "no_lr_decay": {},
    "s_init_1": {"scaler_init": 1.0},
    "s_scale_1": {"scaler_scale": 1.0},
    "alpha_init_half": {"alpha_init": 0.5},
    "alpha_scale_1": {"alpha_scale": 1.0},
    "use_layernorm": {"use_layernorm": True},
}


def ablate(cfg: TrainConfig, flags) -> TrainConfig:
    if isinstance(flags, str):
        flags = [flags]
    for flag in flags:
        if flag not in ABLATIONS:
            raise UsageError(f"unknown ablation flag {flag!r}; choose from {sorted(ABLATIONS)}")
        changes = dict(ABLATIONS[flag])
        if flag == "no_lr_decay":
            changes["lr_final"] = cfg.lr_init
        cfg = replace(cfg, **changes)
    return cfg


def lr_schedule(step: int, total_steps: int, lr_init: float = 1e-4, lr_final: float = 3e-5) -> float:
    if not 0 <= step <= total_steps:
        raise UsageError(f"step {step} outside [0, {total_steps}]")
    frac = step / total_steps if total_steps > 0 else 1.0
    return lr_init + (lr_final - lr_init) * frac


# ------------------------------------------------------------------ assembly
def _opt(v: float):
    return None if math.isnan(v) else v


def encoder_config(cfg: TrainConfig, obs_dim: int, d_h: int, blocks: int) -> EncoderConfig:
    return EncoderConfig(
        obs_dim=obs_dim, d_h=d_h, num_blocks=blocks, c_shift=cfg.c_shift,
        no_l2=cfg.no_l2, no_shift=cfg.no_shift, resize_projection=cfg.resize_projection,
        use_layernorm=cfg.use_layernorm,
        scaler_init=_opt(cfg.scaler_init), scaler_scale=_opt(cfg.scaler_scale),
        alpha_init=_opt(cfg.alpha_init), alpha_scale=_opt(cfg.alpha_scale),
    )


def build_agent(cfg: TrainConfig, seed: int) -> SacState:
    spec = cfg.env_spec
    sac_cfg = SacConfig(
        gamma=cfg.gamma, tau=cfg.tau, clipped_double_q=cfg.use_clipped_double_q(),
        distributional=cfg.distributional, target_entropy=cfg.resolved_target_entropy(),
        init_temperature=cfg.init_temperature, betas=(cfg.beta1, cfg.beta2), bc_lambda=cfg.bc_lambda,
        hard_target=cfg.hard_target, hard_target_period=cfg.hard_target_period,
    )
    return SacState(
        encoder_config(cfg, spec.obs_dim, cfg.actor_d_h, cfg.actor_blocks),
        encoder_config(cfg, spec.obs_dim + spec.action_dim, cfg.critic_d_h, cfg.critic_blocks),
        spec.action_dim,
        make_atoms(cfg.g_min, cfg.g_max, cfg.n_atom),
        sac_cfg,
        seed,
    )


# ------------------------------------------------------------------ sinks
class MemorySink:
    """Collects metrics and telemetry in lists; nothing touches disk."""

    def __init__(self):
        self.metrics: list[tuple] = []
        self.telemetry: list[TelemetryRecord] = []
        self.checkpoints: dict[int, bytes] = {}
        self.diagnostics: list[dict] = []

    def metric(self, row: tuple) -> None:
        self.metrics.append(row)

    def telemetry_record(self, rec: TelemetryRecord) -> None:
        self.telemetry.append(rec)

    def checkpoint(self, step: int, blob: bytes) -> None:
        self.checkpoints[step] = blob

    def diagnostic(self, info: dict) -> None:
        self.diagnostics.append(info)

    def close(self) -> None:
        pass


def format_metric(row: tuple) -> list[str]:
    return [str(row[0])] + [f"{v:.9g}" for v in row[1:]]


class RunDirSink(MemorySink):
    """Writes run_dir/{metrics.csv, telemetry.csv, checkpoints/step_N.ckpt}."""

    def __init__(self, run_dir, append: bool = False):
        super().__init__()
        self.run_dir = Path(run_dir)
        (self.run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
        mode = "a" if append else "w"
        self._metrics_fh = open(self.run_dir / "metrics.csv", mode, newline="")
        self._metrics = csv.writer(self._metrics_fh)
        if not append:
            self._metrics.writerow(METRIC_COLUMNS)
        self._telemetry = TelemetryWriter(self.run_dir / "telemetry.csv", append=append)

    def metric(self, row: tuple) -> None:
        super().metric(row)
        self._metrics.writerow(format_metric(row))
        self._metrics_fh.flush()

    def telemetry_record(self, rec: TelemetryRecord) -> None:
        self._telemetry.write(rec)

    def checkpoint(self, step: int, blob: bytes) -> None:
        (self.run_dir / "checkpoints" / f"step_{step}.ckpt").write_bytes(blob)

    def diagnostic(self, info: dict) -> None:
        super().diagnostic(info)
        (self.run_dir / "diagnostic.json").write_text(json.dumps(info, indent=2, default=float))

    def close(self) -> None:
        self._metrics_fh.close()
        self._telemetry.close()


# ------------------------------------------------------------------ loop state
@dataclass
class RunState:
    cfg: TrainConfig
    agent: SacState
    env: object
    buffer: ReplayBuffer
    scaler: RewardScalerState
    env_rng: np.random.Generator
    act_rng: np.random.Generator
    sample_rng: np.random.Generator
    obs: np.ndarray
    episode_start: bool = True
    step: int = 0
    evals: int = 0
    metrics: list = field(default_factory=list)


def init_run(cfg: TrainConfig, env=None) -> RunState:
    seeds = np.random.SeedSequence(cfg.seed).spawn(4)
    agent = build_agent(cfg, int(seeds[0].generate_state(1)[0]))
    env = env if env is not None else make_env(cfg.env)
    spec = env.spec
    env_rng = np.random.default_rng(seeds[1])
    buffer = ReplayBuffer(spec.obs_dim, spec.action_dim, min(cfg.buffer_capacity, cfg.total_steps))
    scaler = RewardScalerState(gamma=cfg.gamma, g_support_max=cfg.g_max, eps=cfg.reward_eps,
                               bound=cfg.reward_bounding)
    obs = env.reset(env_rng)
    rsnorm_update(agent.obs_rms, obs)
    return RunState(cfg, agent, env, buffer, scaler, env_rng, np.random.default_rng(seeds[2]),
                    np.random.default_rng(seeds[3]), obs)


def policy_action(agent: SacState, obs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    with no_grad():
        mean, log_std = agent.actor(agent.normalize(obs[None, :]))
        action, _ = actor_sample(mean, log_std, rng.standard_normal((1, agent.action_dim)))
    return action.data[0]


def evaluate(agent: SacState, env_name: str, episodes: int, seed: int, eval_index: int) -> np.ndarray:
    """Undiscounted returns of the deterministic policy tanh(mean), episodes run in lock-step."""
    ss = np.random.SeedSequence([seed, 7919, eval_index])
    envs = [make_env(env_name) for _ in range(episodes)]
    obs = np.stack([e.reset(np.random.default_rng(s)) for e, s in zip(envs, ss.spawn(episodes))])
    returns = np.zeros(episodes)
    alive = np.ones(episodes, dtype=bool)
    while alive.any():
        with no_grad():
            mean, _ = agent.actor(agent.normalize(obs))
        actions = deterministic_action(mean)
        for i in np.flatnonzero(alive):
            res = envs[i].step(actions[i])
            returns[i] += res.reward
            obs[i] = res.obs
            if res.terminated or res.truncated:
                alive[i] = False
    return returns


def env_step(run: RunState) -> None:
    """Act, scale the reward, store the transition, and advance the observation statistics."""
    cfg, agent = run.cfg, run.agent
    if run.step < cfg.learning_starts:
        action = run.act_rng.uniform(-1.0, 1.0, agent.action_dim)
    else:
        action = policy_action(agent, run.obs, run.act_rng)
    res = run.env.step(action)
    if cfg.reward_scaling:
        run.scaler, reward = reward_scaler_step(run.scaler, res.reward, run.episode_start)
    else:
        reward = float(res.reward)
    run.buffer.add(Transition(run.obs, action, reward, res.obs, res.terminated, res.truncated))
    rsnorm_update(agent.obs_rms, res.obs)
    run.episode_start = False
    run.obs = res.obs
    if res.terminated or res.truncated:
        run.obs = run.env.reset(run.env_rng)
        rsnorm_update(agent.obs_rms, run.obs)
        run.episode_start = True
    run.step += 1


def run_training(cfg: TrainConfig, env=None, sink=None, resume: bytes | None = None,
                 stop_at: int | None = None, feature_sink=None) -> RunState:
    """Train until ``total_steps`` env steps (or ``stop_at``) have been taken.

    Metrics rows go to ``sink.metric`` after each evaluation. ``feature_sink``
    (a callable taking (agent, features)) sees every update's intermediate features.
    """
    sink = sink if sink is not None else MemorySink()
    run = init_run(cfg, env) if resume is None else ckpt.restore_run(resume, cfg, env)
    end = cfg.total_steps if stop_at is None else min(stop_at, cfg.total_steps)
    agent = run.agent
    while run.step < end:
        env_step(run)
        lr = lr_schedule(run.step, cfg.total_steps, cfg.lr_init, cfg.lr_final)
        if run.step > cfg.learning_starts:
            for _ in range(cfg.utd):
                batch = run.buffer.sample(run.sample_rng, cfg.batch_size)
                want = (agent.updates + 1) % cfg.telemetry_interval == 0
                hook = None
                if want:
                    def hook(a, feats, _n=agent.updates + 1):
                        sink.telemetry_record(record(a.critics[0], feats, _n))
                feats = [] if feature_sink is not None else None
                try:
                    train_step(agent, batch, lr, hook, feats)
                except NumericError as err:
                    info = dict(getattr(err, "record", {}))
                    info.update({"env_step": run.step, "message": str(err)})
                    sink.diagnostic(info)
                    raise
                if feature_sink is not None:
                    feature_sink(agent, feats)
        if run.step % cfg.eval_interval == 0:
            run.evals += 1
            returns = evaluate(agent, cfg.env, cfg.eval_episodes, cfg.seed, run.evals)
            row = (run.step, float(np.mean(returns)), float(np.std(returns)), agent.alpha, lr)
            run.metrics.append(row)
            sink.metric(row)
        if cfg.checkpoint_interval and run.step % cfg.checkpoint_interval == 0:
            sink.checkpoint(run.step, ckpt.dump_run(run))
    return run

