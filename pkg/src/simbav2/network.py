"""Actor and critic networks assembled from the hypersphere primitives.

Both networks take observations that were already normalized with the shared
running statistics (see :func:`normalize_obs`). The critic appends the action
after normalization, so actions keep their (-1, 1) semantics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .distributional import ReturnSupport
from .errors import ConfigError
from .hypersphere import NORM_EPS, HypersphereLinear, LerpBlock, Scaler, default_scaler, shift_embed
from .module import Module, Parameter
from .normalizers import RunningStat, rsnorm_apply
from .tensor import Tensor

LOG_STD_MIN = -10.0
LOG_STD_MAX = 2.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class EncoderConfig:
    obs_dim: int
    d_h: int
    num_blocks: int
    c_shift: float = 3.0
    no_l2: bool = False
    no_shift: bool = False
    resize_projection: bool = False
    use_layernorm: bool = False
    # None selects the default formulas (sqrt(2/d) for scalers, 1/(L+1) and 1/sqrt(d_h) for LERP)
    scaler_init: float | None = None
    scaler_scale: float | None = None
    alpha_init: float | None = None
    alpha_scale: float | None = None

    def __post_init__(self):
        if self.d_h < 1:
            raise ConfigError(f"d_h must be >= 1, got {self.d_h}")
        if self.num_blocks < 1:
            raise ConfigError(f"number of blocks must be >= 1, got {self.num_blocks}")
        if self.c_shift <= 0 and not self.no_shift:
            raise ConfigError(f"c_shift must be positive, got {self.c_shift}")

    @property
    def embed_in_dim(self) -> int:
        if self.use_layernorm or self.no_l2 or self.no_shift:
            return self.obs_dim
        return self.obs_dim + 1

    def scaler(self, dim: int) -> tuple[float, float]:
        init, scale = default_scaler(dim)
        return (
            init if self.scaler_init is None else self.scaler_init,
            scale if self.scaler_scale is None else self.scaler_scale,
        )

    def alpha(self) -> tuple[float, float]:
        return (
            1.0 / (self.num_blocks + 1) if self.alpha_init is None else self.alpha_init,
            1.0 / math.sqrt(self.d_h) if self.alpha_scale is None else self.alpha_scale,
        )


def normalize_obs(rs: RunningStat, obs) -> np.ndarray:
    return rsnorm_apply(rs, obs)


# ----------------------------------------------------------------- encoders
class HyperEncoder(Module):
    """Input projection, scaled unit-row embedding, then LERP blocks."""

    def __init__(self, cfg: EncoderConfig, seed=None):
        rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed
        self.cfg = cfg
        self.embed = HypersphereLinear(cfg.embed_in_dim, cfg.d_h, cfg.scaler(cfg.d_h), rng)
        self.blocks = [
            LerpBlock(cfg.d_h, cfg.num_blocks, rng, cfg.scaler(4 * cfg.d_h), cfg.alpha())
            for _ in range(cfg.num_blocks)
        ]

    def project_input(self, x: Tensor) -> Tensor:
        cfg = self.cfg
        if cfg.no_l2:
            return x
        if cfg.no_shift:
            return T.l2_normalize_lastaxis(x, NORM_EPS)
        if cfg.resize_projection:
            return resize_embed(x, cfg.c_shift, cfg.d_h)
        return shift_embed(x, cfg.c_shift)

    def __call__(self, x, features: list | None = None) -> Tensor:
        h = self.embed(self.project_input(T.as_tensor(x)), renormalize=True)
        if features is not None:
            features.append(("embed", h.data))
        for i, block in enumerate(self.blocks):
            h = block(h)
            if features is not None:
                features.append((f"block{i}", h.data))
        return h

    def layers(self) -> list[tuple[str, Module]]:
        return [("embed", self.embed)] + [(f"block{i}", b) for i, b in enumerate(self.blocks)]


def resize_embed(x, c_shift: float, d_h: int) -> Tensor:
    """Shrink by ``c_shift * sqrt(d_h)`` and lift onto the unit sphere.

    The extra coordinate is ``sqrt(1 - |x'|^2)`` while the shrunk input stays
    inside the unit ball, which keeps its magnitude recoverable.
    """
    x = T.as_tensor(x) * (1.0 / (c_shift * math.sqrt(d_h)))
    sq = (x.data * x.data).sum(axis=-1, keepdims=True)
    lift = np.sqrt(np.maximum(1.0 - sq, 0.0))
    return T.l2_normalize_lastaxis(T.concat_lastaxis([x, lift]), NORM_EPS)


class Dense(Module):
    """Unconstrained affine layer, used only by the LayerNorm baseline path."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.W = Parameter(rng.standard_normal((out_dim, in_dim)) * math.sqrt(2.0 / in_dim))
        self.b = Parameter(np.zeros(out_dim))

    def __call__(self, x) -> Tensor:
        return T.linear(x, self.W) + self.b


class AffineLayerNorm(Module):
    def __init__(self, dim: int):
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))

    def __call__(self, x) -> Tensor:
        return T.layer_norm_lastaxis(x) * self.gamma + self.beta


class ResidualBlock(Module):
    def __init__(self, d_h: int, rng: np.random.Generator):
        self.norm = AffineLayerNorm(d_h)
        self.fc1 = Dense(d_h, 4 * d_h, rng)
        self.fc2 = Dense(4 * d_h, d_h, rng)

    def __call__(self, h) -> Tensor:
        return h + self.fc2(T.relu(self.fc1(self.norm(h))))


class LayerNormEncoder(Module):
    """Pre-LN residual encoder with unconstrained weights (ablation baseline)."""

    def __init__(self, cfg: EncoderConfig, seed=None):
        rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed
        self.cfg = cfg
        self.embed = Dense(cfg.embed_in_dim, cfg.d_h, rng)
        self.blocks = [ResidualBlock(cfg.d_h, rng) for _ in range(cfg.num_blocks)]
        self.final_norm = AffineLayerNorm(cfg.d_h)

    def __call__(self, x, features: list | None = None) -> Tensor:
        h = self.embed(T.as_tensor(x))
        if features is not None:
            features.append(("embed", h.data))
        for i, block in enumerate(self.blocks):
            h = block(h)
            if features is not None:
                features.append((f"block{i}", h.data))
        h = self.final_norm(h)
        if features is not None:
            features.append(("final_norm", h.data))
        return h

    def layers(self) -> list[tuple[str, Module]]:
        return (
            [("embed", self.embed)]
            + [(f"block{i}", b) for i, b in enumerate(self.blocks)]
            + [("final_norm", self.final_norm)]
        )


def make_encoder(cfg: EncoderConfig, seed=None) -> Module:
    return LayerNormEncoder(cfg, seed) if cfg.use_layernorm else HyperEncoder(cfg, seed)


# -------------------------------------------------------------------- heads
class OutputHead(Module):
    """Two-stage unit-row map: W2 ((W1 h) * s)."""

    def __init__(self, d_h: int, out_dim: int, scaler: tuple[float, float], rng, bias: bool = False):
        self.w1 = HypersphereLinear(d_h, d_h, None, rng)
        self.scaler = Scaler(d_h, *scaler)
        self.w2 = HypersphereLinear(d_h, out_dim, None, rng)
        self.bias = Parameter(np.zeros(out_dim)) if bias else None

    def __call__(self, h) -> Tensor:
        out = self.w2(self.scaler(self.w1(h)))
        if self.bias is not None:
            out = out + self.bias
        return out


class Actor(Module):
    """Squashed-Gaussian policy over actions in (-1, 1)^action_dim."""

    def __init__(self, cfg: EncoderConfig, action_dim: int, seed=None):
        rng = np.random.default_rng(seed)
        self.action_dim = action_dim
        self.encoder = make_encoder(cfg, rng)
        self.head = OutputHead(cfg.d_h, 2 * action_dim, cfg.scaler(cfg.d_h), rng, bias=True)

    def __call__(self, o_bar, features: list | None = None) -> tuple[Tensor, Tensor]:
        """Return (mean, log_std) of the pre-squash Gaussian."""
        out = self.head(self.encoder(o_bar, features))
        mean = out[:, : self.action_dim]
        raw = out[:, self.action_dim :]
        log_std = LOG_STD_MIN + (0.5 * (LOG_STD_MAX - LOG_STD_MIN)) * (T.tanh(raw) + 1.0)
        return mean, log_std

    def layers(self) -> list[tuple[str, str, Module]]:
        return [("encoder", n, m) for n, m in self.encoder.layers()] + [("predictor", "head", self.head)]


def actor_sample(mean, log_std, noise) -> tuple[Tensor, Tensor]:
    """Reparameterized tanh-Gaussian sample and its log-density.

    Returns the action ``tanh(mean + std * noise)`` with shape (n, |A|) and
    ``log pi(a|o)`` with shape (n,), including the change-of-variables term
    ``sum log(1 - tanh(u)^2)`` written as ``2 (log 2 - u - softplus(-2u))``.
    """
    mean, log_std = T.as_tensor(mean), T.as_tensor(log_std)
    noise = np.asarray(noise, dtype=np.float64)
    u = mean + T.exp(log_std) * noise
    action = T.tanh(u)
    gauss = (-0.5 * noise * noise - _HALF_LOG_2PI) - log_std
    log_det = 2.0 * (math.log(2.0) - u - T.softplus(-2.0 * u))
    log_prob = T.tsum(gauss - log_det, axis=-1)
    return action, log_prob


def deterministic_action(mean: Tensor) -> np.ndarray:
    return np.tanh(mean.data)


class Critic(Module):
    """Q(o, a) as a categorical distribution over ``support`` (or a scalar for the MSE variant)."""

    def __init__(self, cfg: EncoderConfig, support: ReturnSupport, seed=None, distributional: bool = True):
        rng = np.random.default_rng(seed)
        self.support = support
        self.distributional = distributional
        self.encoder = make_encoder(cfg, rng)
        out_dim = support.n_atom if distributional else 1
        self.head = OutputHead(cfg.d_h, out_dim, cfg.scaler(cfg.d_h), rng)

    def logits(self, o_bar, action, features: list | None = None) -> Tensor:
        x = T.concat_lastaxis([T.as_tensor(o_bar), T.as_tensor(action)])
        z = self.head(self.encoder(x, features))
        if features is not None:
            features.append(("head", z.data))
        return z

    def __call__(self, o_bar, action, features: list | None = None) -> tuple[Tensor | None, Tensor]:
        """Return (probs, Q). ``probs`` is None for the MSE variant."""
        z = self.logits(o_bar, action, features)
        if not self.distributional:
            return None, z.reshape(z.shape[0])
        return critic_forward(z, self.support)

    def layers(self) -> list[tuple[str, str, Module]]:
        return [("encoder", n, m) for n, m in self.encoder.layers()] + [("predictor", "head", self.head)]


def critic_forward(logits, support: ReturnSupport) -> tuple[Tensor, Tensor]:
    probs = T.softmax_lastaxis(logits)
    q = T.linear(probs, support.atoms[None, :])
    return probs, q.reshape(q.shape[0])


@dataclass
class NetworkShapes:
    """Hand formulas for parameter counts, used to audit constructions."""

    obs_dim: int
    action_dim: int
    actor_d_h: int = 128
    actor_blocks: int = 1
    critic_d_h: int = 512
    critic_blocks: int = 2
    n_atom: int = 101

    @staticmethod
    def _encoder(in_dim: int, d: int, blocks: int) -> int:
        embed = (in_dim + 1) * d + d
        block = 4 * d * d + 4 * d + 4 * d * d + d
        return embed + blocks * block

    def actor(self) -> int:
        d = self.actor_d_h
        head = d * d + d + 2 * self.action_dim * d + 2 * self.action_dim
        return self._encoder(self.obs_dim, d, self.actor_blocks) + head

    def critic(self) -> int:
        d = self.critic_d_h
        head = d * d + d + self.n_atom * d
        return self._encoder(self.obs_dim + self.action_dim, d, self.critic_blocks) + head
