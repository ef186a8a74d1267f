"""Streaming observation statistics and the discounted-return reward scaler."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, UsageError


@dataclass
class RunningStat:
    """Per-dimension running mean and variance.

    Starts from mean 0, var 0, count 0 and follows the recursion

        delta = o - mean
        mean += delta / n
        var  += (delta**2 - var) / n

    literally, so the first update sets ``var`` to the squared first sample
    rather than 0.
    """

    mean: np.ndarray
    var: np.ndarray
    count: int = 0

    @classmethod
    def zeros(cls, dim: int | tuple[int, ...] = ()) -> "RunningStat":
        return cls(mean=np.zeros(dim), var=np.zeros(dim), count=0)

    def copy(self) -> "RunningStat":
        return RunningStat(self.mean.copy(), self.var.copy(), self.count)


def rsnorm_update(s: RunningStat, o) -> RunningStat:
    o = np.asarray(o, dtype=np.float64)
    if o.shape != s.mean.shape:
        raise UsageError(f"observation shape {o.shape} != running-stat shape {s.mean.shape}")
    n = s.count + 1
    delta = o - s.mean
    s.mean = s.mean + delta / n
    s.var = s.var + (delta * delta - s.var) / n
    s.count = n
    return s


def rsnorm_apply(s: RunningStat, o, eps: float = 1e-8) -> np.ndarray:
    if s.count == 0:
        raise UsageError("running statistics have not seen any sample yet")
    return (np.asarray(o, dtype=np.float64) - s.mean) / np.sqrt(s.var + eps)


@dataclass
class RewardScalerState:
    gamma: float = 0.99
    g_support_max: float = 5.0
    eps: float = 1e-8
    bound: bool = True
    G: float = 0.0
    g_running_max: float = 0.0
    g_stat: RunningStat = field(default_factory=RunningStat.zeros)

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.g_support_max <= 0:
            raise ConfigError(f"G_max of the return support must be positive, got {self.g_support_max}")

    def denominator(self) -> float:
        """Current divisor applied to raw rewards."""
        std = float(np.sqrt(self.g_stat.var + self.eps))
        if not self.bound:
            return std
        return max(std, self.g_running_max / self.g_support_max)


def reward_scaler_step(st: RewardScalerState, r: float, episode_start: bool) -> tuple[RewardScalerState, float]:
    """Advance the return tracker by one environment step and scale ``r``.

    Rewards are divided, never shifted: the sign of the scaled reward always
    matches the raw reward.
    """
    if episode_start:
        st.G = 0.0
    st.G = st.gamma * st.G + float(r)
    rsnorm_update(st.g_stat, st.G)
    st.g_running_max = max(st.g_running_max, st.G)
    return st, float(r) / st.denominator()
