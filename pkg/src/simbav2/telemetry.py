"""Dimension-weighted norms and effective learning rate of the critic.

Every parameter vector contributes with weight ``|theta_i| / sum_j |theta_j|``.
A weight matrix is treated as a stack of row vectors (one per output unit),
so a matrix whose rows are all unit-norm has weighted norm exactly 1.
Features are weighted by the parameter count of the layer that produced them.
"""

from __future__ import annotations

import csv
import math
from dataclasses import astuple, dataclass, fields
from typing import Iterable, Sequence

import numpy as np

from .errors import NumericError, UsageError

COLUMNS = (
    "update_step",
    "enc_feat_norm",
    "enc_w_norm_constrained",
    "enc_w_norm_all",
    "enc_g_norm",
    "enc_elr",
    "pred_feat_norm",
    "pred_w_norm_constrained",
    "pred_w_norm_all",
    "pred_g_norm",
    "pred_elr",
)


@dataclass
class TelemetryRecord:
    update_step: int
    enc_feat_norm: float
    enc_w_norm_constrained: float
    enc_w_norm_all: float
    enc_g_norm: float
    enc_elr: float
    pred_feat_norm: float
    pred_w_norm_constrained: float
    pred_w_norm_all: float
    pred_g_norm: float
    pred_elr: float

    def row(self) -> list[str]:
        return [str(self.update_step)] + [f"{v:.9g}" for v in astuple(self)[1:]]


def weighted_norm(groups: Iterable[tuple[float, float]]) -> float:
    """sqrt(sum_i w_i * norm2_i) for (norm2_i, dims_i) pairs, w_i = dims_i / sum(dims)."""
    groups = list(groups)
    if not groups:
        raise UsageError("weighted_norm needs at least one group")
    sq = np.array([g[0] for g in groups], dtype=np.float64)
    dims = np.array([g[1] for g in groups], dtype=np.float64)
    if np.any(dims <= 0):
        raise UsageError("group dimensions must be positive")
    return float(np.sqrt(np.sum(dims / dims.sum() * sq)))


def elr(groups: Iterable[tuple[float, float, float]]) -> float:
    """sqrt(sum_i w_i * |g_i|^2 / |theta_i|^2) for (grad_norm2, param_norm2, dims) triples."""
    groups = list(groups)
    if not groups:
        raise UsageError("elr needs at least one group")
    g2 = np.array([g[0] for g in groups], dtype=np.float64)
    p2 = np.array([g[1] for g in groups], dtype=np.float64)
    dims = np.array([g[2] for g in groups], dtype=np.float64)
    if np.any(dims <= 0):
        raise UsageError("group dimensions must be positive")
    if np.any(p2 <= 0):
        raise NumericError("effective learning rate is undefined for a zero-norm parameter")
    return float(np.sqrt(np.sum(dims / dims.sum() * g2 / p2)))


def _vector_groups(p: np.ndarray) -> tuple[np.ndarray, int]:
    """Per-row squared norms and the per-row dimension of a parameter."""
    if p.ndim == 2:
        return (p * p).sum(axis=1), p.shape[1]
    return np.array([float((p * p).sum())]), p.size


def _part_stats(layers: Sequence, features: dict[str, np.ndarray]) -> dict[str, float]:
    feat, w_all, w_mat, g_all, ratio = [], [], [], [], []
    for name, module in layers:
        params = module.parameters()
        layer_dims = sum(p.data.size for p in params)
        if name in features:
            h = features[name]
            feat.append((float(np.mean((h * h).sum(axis=-1))), layer_dims))
        for p in params:
            p2, d = _vector_groups(p.data)
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            g2, _ = _vector_groups(grad)
            for pi, gi in zip(p2, g2):
                w_all.append((pi, d))
                g_all.append((gi, d))
                if p.data.ndim == 2:
                    w_mat.append((pi, d))
                if pi > 0:
                    ratio.append((gi, pi, d))
    return {
        "feat_norm": weighted_norm(feat) if feat else math.nan,
        "w_norm_constrained": weighted_norm(w_mat) if w_mat else math.nan,
        "w_norm_all": weighted_norm(w_all),
        "g_norm": weighted_norm(g_all),
        "elr": elr(ratio) if ratio else 0.0,
    }


def record(critic, features: Sequence[tuple[str, np.ndarray]], update_step: int) -> TelemetryRecord:
    """Measure one critic right after its backward pass (before the optimizer moves it)."""
    feats = dict(features)
    layers = critic.layers()
    enc = _part_stats([(n, m) for part, n, m in layers if part == "encoder"], feats)
    pred = _part_stats([(n, m) for part, n, m in layers if part == "predictor"], feats)
    return TelemetryRecord(
        update_step,
        enc["feat_norm"], enc["w_norm_constrained"], enc["w_norm_all"], enc["g_norm"], enc["elr"],
        pred["feat_norm"], pred["w_norm_constrained"], pred["w_norm_all"], pred["g_norm"], pred["elr"],
    )


class TelemetryWriter:
    def __init__(self, path, append: bool = False):
        self._fh = open(path, "a" if append else "w", newline="")
        self._writer = csv.writer(self._fh)
        if not append:
            self._writer.writerow(COLUMNS)

    def write(self, rec: TelemetryRecord) -> None:
        self._writer.writerow(rec.row())

    def flush(self) -> None:
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def read_telemetry(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    arr = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    return {name: arr[:, i] for i, name in enumerate(header)}


def drift_ratio(series: np.ndarray) -> float:
    """max/min over the second half of a positive series."""
    series = np.asarray(series, dtype=np.float64)
    half = series[len(series) // 2 :]
    if half.size == 0:
        return math.nan
    lo = float(np.min(half))
    return math.inf if lo <= 0 else float(np.max(half)) / lo


def summarize(columns: dict[str, np.ndarray]) -> dict:
    out: dict = {"n_records": int(len(columns.get("update_step", [])))}
    if out["n_records"] == 0:
        out["empty"] = True
        return out
    out["empty"] = False
    for name in COLUMNS[1:]:
        col = columns[name]
        out[name] = {"min": float(np.min(col)), "max": float(np.max(col)), "mean": float(np.mean(col))}
    out["enc_elr_drift"] = drift_ratio(columns["enc_elr"])
    out["pred_elr_drift"] = drift_ratio(columns["pred_elr"])
    return out


_FIELDS = [f.name for f in fields(TelemetryRecord)]
assert tuple(_FIELDS) == COLUMNS
