"""Small deterministic continuous-control tasks.

Actions are given in [-1, 1]^|A| and rescaled by each task. ``terminated``
marks failure/goal (no bootstrap); ``truncated`` marks the time limit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EnvSpec:
    name: str
    obs_dim: int
    action_dim: int
    max_episode_steps: int
    has_failure_termination: bool
    gamma: float = 0.99


@dataclass
class StepResult:
    obs: np.ndarray
    reward: float
    terminated: bool
    truncated: bool


def angle_normalize(x: float) -> float:
    return ((x + math.pi) % (2.0 * math.pi)) - math.pi


class Pendulum:
    """Torque-limited swing-up; theta = 0 is upright.

    theta_ddot = 3g/(2l) sin(theta) + 3u/(m l^2), integrated with
    semi-implicit Euler. Angular speed is clipped to +-max_speed.
    """

    spec = EnvSpec("pendulum", obs_dim=3, action_dim=1, max_episode_steps=200, has_failure_termination=False)

    def __init__(self, dt: float = 0.05, g: float = 10.0, m: float = 1.0, l: float = 1.0,
                 max_torque: float = 2.0, max_speed: float = 8.0, max_episode_steps: int = 200):
        self.dt, self.g, self.m, self.l = dt, g, m, l
        self.max_torque = max_torque
        self.max_speed = max_speed
        self.max_episode_steps = max_episode_steps
        self.theta = 0.0
        self.theta_dot = 0.0
        self.t = 0

    def reset(self, seed=None) -> np.ndarray:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.theta = float(rng.uniform(-math.pi, math.pi))
        self.theta_dot = float(rng.uniform(-1.0, 1.0))
        self.t = 0
        return self.observe()

    def set_state(self, theta: float, theta_dot: float, t: int = 0) -> np.ndarray:
        self.theta, self.theta_dot, self.t = float(theta), float(theta_dot), int(t)
        return self.observe()

    def get_state(self) -> np.ndarray:
        return np.array([self.theta, self.theta_dot, float(self.t)])

    def observe(self) -> np.ndarray:
        return np.array([math.cos(self.theta), math.sin(self.theta), self.theta_dot])

    def energy(self) -> float:
        """Mechanical energy per unit m l^2 / 3, zero at the hanging rest state."""
        return 0.5 * self.theta_dot**2 + 1.5 * self.g / self.l * (1.0 + math.cos(self.theta))

    def shadow_energy(self) -> float:
        """Energy corrected by the O(dt) term that semi-implicit Euler conserves exactly
        up to O(dt^2); the plain energy oscillates by roughly dt * omega / 2."""
        k = 1.5 * self.g / self.l
        return self.energy() + 0.5 * self.dt * self.theta_dot * k * math.sin(self.theta)

    def step(self, action) -> StepResult:
        u = float(np.clip(np.asarray(action, dtype=np.float64).reshape(-1)[0], -1.0, 1.0)) * self.max_torque
        th, thdot = self.theta, self.theta_dot
        cost = angle_normalize(th) ** 2 + 0.1 * thdot**2 + 0.001 * u**2
        acc = 3.0 * self.g / (2.0 * self.l) * math.sin(th) + 3.0 * u / (self.m * self.l**2)
        thdot = float(np.clip(thdot + acc * self.dt, -self.max_speed, self.max_speed))
        self.theta = th + thdot * self.dt
        self.theta_dot = thdot
        self.t += 1
        return StepResult(self.observe(), -cost, False, self.t >= self.max_episode_steps)


class PointMass:
    """2-D double integrator that must reach the origin."""

    spec = EnvSpec("pointmass", obs_dim=4, action_dim=2, max_episode_steps=100, has_failure_termination=True)

    def __init__(self, dt: float = 0.1, max_accel: float = 1.0, goal_radius: float = 0.05,
                 max_episode_steps: int = 100):
        self.dt = dt
        self.max_accel = max_accel
        self.goal_radius = goal_radius
        self.max_episode_steps = max_episode_steps
        self.pos = np.zeros(2)
        self.vel = np.zeros(2)
        self.t = 0

    def reset(self, seed=None) -> np.ndarray:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.pos = rng.uniform(-1.0, 1.0, size=2)
        self.vel = np.zeros(2)
        self.t = 0
        return self.observe()

    def set_state(self, pos, vel, t: int = 0) -> np.ndarray:
        self.pos = np.array(pos, dtype=np.float64)
        self.vel = np.array(vel, dtype=np.float64)
        self.t = int(t)
        return self.observe()

    def get_state(self) -> np.ndarray:
        return np.concatenate([self.pos, self.vel, [float(self.t)]])

    def observe(self) -> np.ndarray:
        return np.concatenate([self.pos, self.vel])

    def distance(self) -> float:
        return float(np.linalg.norm(self.pos))

    def step(self, action) -> StepResult:
        a = np.clip(np.asarray(action, dtype=np.float64).reshape(2), -1.0, 1.0) * self.max_accel
        self.vel = self.vel + a * self.dt
        self.pos = self.pos + self.vel * self.dt
        self.t += 1
        dist = self.distance()
        return StepResult(self.observe(), -dist, dist < self.goal_radius, self.t >= self.max_episode_steps)


ENVS = {"pendulum": Pendulum, "pointmass": PointMass}


def make_env(name: str):
    try:
        return ENVS[name]()
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVS)}") from None


def restore_env(env, state: np.ndarray) -> None:
    if isinstance(env, Pendulum):
        env.set_state(state[0], state[1], int(state[2]))
    else:
        env.set_state(state[:2], state[2:4], int(state[4]))
