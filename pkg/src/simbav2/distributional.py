"""Fixed return support, categorical projection, and the cross-entropy critic loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .tensor import Tensor

LOG_TINY = 1e-12


@dataclass(frozen=True)
class ReturnSupport:
    g_min: float
    g_max: float
    n_atom: int
    atoms: np.ndarray

    @property
    def delta(self) -> float:
        return (self.g_max - self.g_min) / (self.n_atom - 1)


def make_atoms(g_min: float = -5.0, g_max: float = 5.0, n_atom: int = 101) -> ReturnSupport:
    if not g_max > g_min:
        raise ConfigError(f"support needs G_max > G_min, got [{g_min}, {g_max}]")
    if n_atom < 2:
        raise ConfigError(f"need at least 2 atoms, got {n_atom}")
    i = np.arange(n_atom)
    atoms = g_min + i * (g_max - g_min) / (n_atom - 1)
    atoms[-1] = g_max
    atoms.setflags(write=False)
    return ReturnSupport(float(g_min), float(g_max), int(n_atom), atoms)


def categorical_project(support: ReturnSupport, target_values, source_probs) -> np.ndarray:
    """Project a distribution with atoms at ``target_values`` onto ``support``.

    Each target value is clamped to [G_min, G_max] and its mass is split
    linearly between the two neighbouring support atoms. Works on a single
    distribution (1-D inputs) or on a batch (rows).
    """
    values = np.asarray(target_values, dtype=np.float64)
    probs = np.asarray(source_probs, dtype=np.float64)
    single = values.ndim == 1
    values, probs = np.atleast_2d(values), np.atleast_2d(probs)
    values, probs = np.broadcast_arrays(values, probs)
    n_rows, n_src = values.shape
    n = support.n_atom

    b = (np.clip(values, support.g_min, support.g_max) - support.g_min) / support.delta
    nearest = np.rint(b)
    b = np.where(np.abs(b - nearest) < 1e-9, nearest, b)
    lower = np.floor(b).astype(np.int64)
    upper = np.minimum(lower + 1, n - 1)
    w_upper = b - lower
    w_lower = 1.0 - w_upper

    offset = (np.arange(n_rows) * n)[:, None]
    out = np.bincount((lower + offset).ravel(), (probs * w_lower).ravel(), minlength=n_rows * n)
    out += np.bincount((upper + offset).ravel(), (probs * w_upper).ravel(), minlength=n_rows * n)
    out = out.reshape(n_rows, n)
    return out[0] if single else out


def kl_critic_loss(pred_probs, target_probs) -> Tensor:
    """Batch-mean cross-entropy ``-sum(target * log(pred + tiny))``.

    The target is treated as a constant. Cross-entropy differs from
    KL(target || pred) only by the target's entropy, so the gradients match.
    """
    pred_probs = T.as_tensor(pred_probs)
    target = np.asarray(target_probs, dtype=np.float64)
    logp = T.log(pred_probs + LOG_TINY)
    per_sample = T.tsum(logp * target, axis=-1)
    if per_sample.ndim == 0:
        return -per_sample
    return -T.tmean(per_sample)


def kl_critic_loss_from_logits(logits, target_probs) -> Tensor:
    """Same objective as :func:`kl_critic_loss` evaluated from logits with a fused log-softmax."""
    per_sample = T.softmax_cross_entropy(logits, target_probs)
    if per_sample.ndim == 0:
        return per_sample
    return T.tmean(per_sample)
