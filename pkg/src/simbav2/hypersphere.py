"""Unit-sphere building blocks: shift embedding, scaled unit-row linear
layers, LERP residual blocks, and post-step weight projection."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, NumericError
from .module import Module, Parameter
from .tensor import Tensor

NORM_EPS = 1e-8


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def init_orthonormal(out_dim: int, in_dim: int, seed=None) -> np.ndarray:
    """Orthogonal (out_dim, in_dim) matrix with unit-norm rows.

    Uses the QR factorisation of a Gaussian matrix with the signs of R's
    diagonal folded into Q, so the result depends only on the seed.
    """
    rng = _rng(seed)
    if out_dim <= in_dim:
        q, r = np.linalg.qr(rng.standard_normal((in_dim, out_dim)))
        q = q * np.sign(np.diag(r))
        return project_weights(q.T)
    q, r = np.linalg.qr(rng.standard_normal((out_dim, in_dim)))
    q = q * np.sign(np.diag(r))
    return project_weights(q)


def project_weights(w: np.ndarray) -> np.ndarray:
    """Rescale every row of ``w`` to unit l2 norm."""
    norms = np.sqrt((w * w).sum(axis=-1, keepdims=True))
    if np.any(norms < NORM_EPS) or not np.all(np.isfinite(norms)):
        raise NumericError("cannot project a zero or non-finite weight row onto the unit sphere")
    return w / norms


def project_weights_inplace(w: np.ndarray) -> None:
    """In-place :func:`project_weights` for the per-step hot path."""
    norms = np.sqrt(np.einsum("ij,ij->i", w, w))
    if norms.min() < NORM_EPS or not np.isfinite(norms).all():
        raise NumericError("cannot project a zero or non-finite weight row onto the unit sphere")
    w /= norms[:, None]


def shift_embed(o_bar, c_shift: float) -> Tensor:
    """Append ``c_shift`` as an extra coordinate, then l2-normalize.

    The extra axis keeps the magnitude of ``o_bar`` recoverable after the
    projection: [1, 0] and [2, 0] land on different points.
    """
    if c_shift <= 0:
        raise ConfigError(f"c_shift must be positive, got {c_shift}")
    o_bar = T.as_tensor(o_bar)
    const = np.full(o_bar.shape[:-1] + (1,), float(c_shift))
    return T.l2_normalize_lastaxis(T.concat_lastaxis([o_bar, const]), NORM_EPS)


class Scaler(Module):
    """Learnable elementwise gain with decoupled init and learning scale.

    The stored parameter starts at ``scale`` but the forward multiplier is
    ``stored * init / scale``, which equals ``init`` at initialisation.
    """

    def __init__(self, dim: int, init: float, scale: float):
        self.stored = Parameter(np.full(dim, float(scale)))
        self.s_init = np.full(dim, float(init))
        self.s_scale = np.full(dim, float(scale))
        self.factor = self.s_init / self.s_scale

    @property
    def dim(self) -> int:
        return self.stored.shape[0]

    def multiplier(self) -> np.ndarray:
        return self.stored.data * self.factor

    def __call__(self, x) -> Tensor:
        x = T.as_tensor(x)
        if x.shape[-1] != self.dim:
            raise DimensionError(f"scaler of size {self.dim} applied to input of shape {x.shape}")
        return x * (self.stored * self.factor)


class HypersphereLinear(Module):
    """Bias-free linear map with unit-norm rows and an optional output scaler."""

    def __init__(self, in_dim: int, out_dim: int, scaler: tuple[float, float] | None = None, seed=None):
        self.W = Parameter(init_orthonormal(out_dim, in_dim, seed), unit_rows=True)
        self.scaler = Scaler(out_dim, *scaler) if scaler is not None else None

    def __call__(self, h, renormalize: bool = False) -> Tensor:
        if self.scaler is not None:
            z = T.scaled_linear(h, self.W, self.scaler.stored * self.scaler.factor)
        else:
            z = T.linear(h, self.W)
        if renormalize:
            z = T.l2_normalize_lastaxis(z, NORM_EPS)
        return z


def default_scaler(dim: int) -> tuple[float, float]:
    s = math.sqrt(2.0 / dim)
    return s, s


class LerpBlock(Module):
    """Inverted-bottleneck MLP on the sphere, merged with its input by LERP."""

    def __init__(
        self,
        d_h: int,
        num_blocks: int,
        seed=None,
        mlp_scaler: tuple[float, float] | None = None,
        alpha: tuple[float, float] | None = None,
    ):
        rng = _rng(seed)
        self.mlp_in = HypersphereLinear(d_h, 4 * d_h, mlp_scaler or default_scaler(4 * d_h), rng)
        self.mlp_out = HypersphereLinear(4 * d_h, d_h, None, rng)
        a_init, a_scale = alpha or (1.0 / (num_blocks + 1), 1.0 / math.sqrt(d_h))
        self.alpha = Scaler(d_h, a_init, a_scale)

    def transform(self, h) -> Tensor:
        x = T.relu(self.mlp_in(h))
        return T.l2_normalize_lastaxis(self.mlp_out(x), NORM_EPS)

    def __call__(self, h) -> Tensor:
        h = T.as_tensor(h)
        h_tilde = self.transform(h)
        return lerp(h, h_tilde, self.alpha)


def lerp(h, h_tilde, alpha) -> Tensor:
    """l2norm((1 - alpha) * h + alpha * h_tilde); ``alpha`` is a Scaler or array."""
    h, h_tilde = T.as_tensor(h), T.as_tensor(h_tilde)
    step = h_tilde - h
    step = alpha(step) if isinstance(alpha, Scaler) else step * np.asarray(alpha, dtype=np.float64)
    return T.l2_normalize_lastaxis(h + step, NORM_EPS)


def sphere_exp(h: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Exponential map on the unit sphere at ``h`` applied to tangent ``v``."""
    n = np.linalg.norm(v)
    if n == 0.0:
        return h.copy()
    return math.cos(n) * h + math.sin(n) * v / n
