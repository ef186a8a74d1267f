import csv
import math

import numpy as np
import pytest

from simbav2.distributional import make_atoms
from simbav2.errors import NumericError, UsageError
from simbav2.network import Critic, EncoderConfig
from simbav2.telemetry import (
    COLUMNS,
    TelemetryRecord,
    TelemetryWriter,
    drift_ratio,
    elr,
    read_telemetry,
    record,
    summarize,
    weighted_norm,
)

SUPPORT = make_atoms(-5.0, 5.0, 101)


def test_weighted_norm_single_group():
    assert weighted_norm([(4.0, 3)]) == 2.0


def test_weighted_norm_dimension_weights():
    # weights 1/4 and 3/4
    assert weighted_norm([(1.0, 1), (9.0, 3)]) == pytest.approx(math.sqrt(0.25 + 6.75))


def test_weighted_norm_errors():
    with pytest.raises(UsageError):
        weighted_norm([])
    with pytest.raises(UsageError):
        weighted_norm([(1.0, 0)])


def test_elr_examples():
    assert elr([(0.0, 1.0, 5)]) == 0.0
    assert elr([(0.04, 1.0, 2), (0.16, 4.0, 2)]) == pytest.approx(0.2)
    with pytest.raises(NumericError):
        elr([(1.0, 0.0, 1)])


def fresh_critic(use_layernorm=False):
    cfg = EncoderConfig(obs_dim=4, d_h=16, num_blocks=2, use_layernorm=use_layernorm)
    return Critic(cfg, SUPPORT, seed=0)


def test_fresh_critic_record():
    critic = fresh_critic()
    feats = []
    critic(np.random.default_rng(0).standard_normal((8, 3)), np.zeros((8, 1)), feats)
    rec = record(critic, feats, 1)
    assert abs(rec.enc_w_norm_constrained - 1.0) <= 1e-6
    assert abs(rec.pred_w_norm_constrained - 1.0) <= 1e-6
    assert abs(rec.enc_feat_norm - 1.0) <= 1e-6
    # no backward pass yet: zero gradients give zero effective learning rate
    assert rec.enc_elr == 0.0 and rec.pred_elr == 0.0 and rec.enc_g_norm == 0.0


def test_record_after_backward_has_positive_elr():
    from simbav2 import tensor as T

    critic = fresh_critic()
    feats = []
    _, q = critic(np.random.default_rng(1).standard_normal((8, 3)), np.zeros((8, 1)), feats)
    T.tsum(q).backward()
    rec = record(critic, feats, 2)
    assert rec.enc_elr > 0 and rec.pred_elr > 0


def test_layernorm_critic_is_not_pinned_to_unit_norm():
    critic = fresh_critic(use_layernorm=True)
    feats = []
    critic(np.random.default_rng(0).standard_normal((8, 3)) * 4, np.zeros((8, 1)), feats)
    rec = record(critic, feats, 1)
    assert abs(rec.enc_feat_norm - 1.0) > 1e-3


def test_csv_round_trip(tmp_path):
    path = tmp_path / "t.csv"
    w = TelemetryWriter(path)
    recs = [TelemetryRecord(i, *np.linspace(0.1, 1.0, 10) * i) for i in (1, 2, 3)]
    for r in recs:
        w.write(r)
    w.close()
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == COLUMNS
    assert rows[1][0] == "1"
    cols = read_telemetry(path)
    np.testing.assert_allclose(cols["enc_elr"], [0.5, 1.0, 1.5], rtol=1e-9)


def test_drift_ratio():
    assert drift_ratio(np.full(10, 3.0)) == 1.0
    assert drift_ratio(np.array([100.0, 1.0, 2.0, 4.0])) == 2.0
    assert math.isnan(drift_ratio(np.array([])))
    assert drift_ratio(np.array([1.0, 0.0])) == math.inf


def test_summarize_empty_and_full():
    assert summarize({name: np.array([]) for name in COLUMNS})["empty"]
    cols = {name: np.array([1.0, 2.0, 3.0, 4.0]) for name in COLUMNS}
    out = summarize(cols)
    assert not out["empty"] and out["n_records"] == 4
    assert out["enc_elr"] == {"min": 1.0, "max": 4.0, "mean": 2.5}
    assert out["enc_elr_drift"] == 4.0 / 3.0
