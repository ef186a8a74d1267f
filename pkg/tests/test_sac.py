import math

import numpy as np
import pytest

from gradcheck import directional
from simbav2 import tensor as T
from simbav2.distributional import make_atoms
from simbav2.errors import ConfigError, NumericError
from simbav2.network import EncoderConfig
from simbav2.normalizers import rsnorm_update
from simbav2.sac import (
    Batch,
    SacConfig,
    SacState,
    actor_loss,
    bc_actor_loss,
    critic_loss,
    critic_target_dist,
    ema_update,
    mse_target,
    temperature_loss,
    train_step,
)

OBS, ACT = 3, 1


def make_state(support=None, seed=0, d_h=8, **kw):
    support = support or make_atoms(-5.0, 5.0, 101)
    return SacState(
        EncoderConfig(obs_dim=OBS, d_h=d_h, num_blocks=1),
        EncoderConfig(obs_dim=OBS + ACT, d_h=d_h, num_blocks=1),
        ACT,
        support,
        SacConfig(**kw),
        seed=seed,
    )


def make_batch(n=16, seed=0, terminated=0.0, reward=None):
    rng = np.random.default_rng(seed)
    return Batch(
        obs=rng.standard_normal((n, OBS)),
        action=rng.uniform(-1, 1, (n, ACT)),
        reward=rng.standard_normal(n) * 0.5 if reward is None else np.full(n, reward, dtype=np.float64),
        next_obs=rng.standard_normal((n, OBS)),
        terminated=np.full(n, terminated),
        dataset_action=rng.uniform(-1, 1, (n, ACT)),
    )


def warm(state, batch):
    for o in batch.obs:
        rsnorm_update(state.obs_rms, o)
    return state


# ---------------------------------------------------------------- distributional TD target
def test_terminal_zero_reward_is_point_mass_at_zero():
    state = make_state()
    batch = make_batch(4, terminated=1.0, reward=0.0)
    target = critic_target_dist(batch, warm(state, batch))
    expected = np.zeros((4, 101))
    expected[:, 50] = 1.0
    np.testing.assert_allclose(target, expected, atol=1e-12)


def test_zero_discount_gives_projected_reward():
    state = make_state(gamma=0.0)
    batch = make_batch(3, reward=0.25)
    target = critic_target_dist(batch, warm(state, batch))
    np.testing.assert_allclose(target[:, 52], 0.5, atol=1e-9)
    np.testing.assert_allclose(target[:, 53], 0.5, atol=1e-9)
    np.testing.assert_allclose(target.sum(1), 1.0, atol=1e-12)


def test_two_atom_hand_oracle():
    support = make_atoms(0.0, 1.0, 2)
    state = make_state(support, gamma=0.5, clipped_double_q=False)
    state.log_alpha.data = np.array(-60.0)  # entropy bonus vanishes
    batch = make_batch(5, reward=0.2)
    warm(state, batch)
    probs, _ = state.target_critics[0](state.normalize(batch.next_obs), _next_action(state, batch))
    p0, p1 = probs.data[:, 0], probs.data[:, 1]
    # atom values are 0.2 and 0.7
    expected = np.stack([0.8 * p0 + 0.3 * p1, 0.2 * p0 + 0.7 * p1], axis=1)
    noise = np.random.default_rng(5).standard_normal((5, 1))
    np.testing.assert_allclose(critic_target_dist(batch, state, noise=noise), expected, atol=1e-12)


def _next_action(state, batch):
    from simbav2.network import actor_sample

    mean, log_std = state.actor(state.normalize(batch.next_obs))
    return actor_sample(mean, log_std, np.random.default_rng(5).standard_normal((len(batch), 1)))[0].data


def test_clipped_double_q_uses_lower_critic_distribution():
    state = make_state(seed=3)
    batch = make_batch(6, seed=3)
    warm(state, batch)
    state.target_critics[1].head.w2.W.data *= 0.0
    state.target_critics[1].head.w2.W.data[50] = 1.0  # the second target now predicts near zero
    noise = np.zeros((6, 1))
    target = critic_target_dist(batch, state, noise=noise)
    nb = state.normalize(batch.next_obs)
    from simbav2.network import actor_sample

    a, logp = actor_sample(*state.actor(nb), noise)
    outs = [c(nb, a.data) for c in state.target_critics]
    pick = np.argmin([o[1].data for o in outs], axis=0)
    from simbav2.distributional import categorical_project

    for i in range(6):
        vals = batch.reward[i] + 0.99 * (state.support.atoms - state.alpha * logp.data[i])
        ref = categorical_project(state.support, vals[None], outs[pick[i]][0].data[i][None])[0]
        np.testing.assert_allclose(target[i], ref, atol=1e-12)


# ---------------------------------------------------------------- MSE variant
def test_mse_target_terminal_is_reward():
    state = make_state(distributional=False)
    batch = make_batch(4, terminated=1.0)
    np.testing.assert_allclose(mse_target(batch, warm(state, batch)), batch.reward, atol=0)


def test_mse_critic_loss_hand_example():
    state = make_state(distributional=False, clipped_double_q=False)
    batch = make_batch(4, terminated=1.0)
    warm(state, batch)
    ob = state.normalize(batch.obs)
    _, q = state.critics[0](ob, batch.action)
    loss = critic_loss(batch, state, ob, state.normalize(batch.next_obs))
    assert float(loss.data) == pytest.approx(np.mean((q.data - batch.reward) ** 2), rel=1e-12)


# ---------------------------------------------------------------- composite gradients
def test_critic_loss_gradient():
    state = make_state()
    batch = make_batch(6)
    warm(state, batch)
    ob, nb = state.normalize(batch.obs), state.normalize(batch.next_obs)
    noise = np.random.default_rng(1).standard_normal((6, 1))
    err = directional(lambda: critic_loss(batch, state, ob, nb, noise=noise), state.critics[0].parameters(), np.random.default_rng(2))
    assert err < 1e-4


def test_actor_loss_gradient():
    state = make_state()
    batch = make_batch(6)
    warm(state, batch)
    noise = np.random.default_rng(1).standard_normal((6, 1))
    err = directional(lambda: actor_loss(batch, state, 0.2, noise=noise)[0], state.actor.parameters(), np.random.default_rng(2))
    assert err < 1e-4


def test_bc_loss_gradient_and_zero_lambda():
    state = make_state()
    batch = make_batch(6)
    warm(state, batch)
    noise = np.random.default_rng(1).standard_normal((6, 1))
    base = float(actor_loss(batch, state, 0.2, noise=noise)[0].data)
    assert float(bc_actor_loss(batch, state, 0.2, 0.0, noise=noise)[0].data) == base
    # the Q-magnitude weight is detached, so the difference quotient holds it fixed
    q_scale = abs(float(np.mean(actor_loss(batch, state, 0.2, noise=noise)[2])))
    err = directional(
        lambda: bc_actor_loss(batch, state, 0.2, 2.5, noise=noise, q_scale=q_scale)[0],
        state.actor.parameters(),
        np.random.default_rng(2),
    )
    assert err < 1e-4
    free = bc_actor_loss(batch, state, 0.2, 2.5, noise=noise)[0]
    pinned = bc_actor_loss(batch, state, 0.2, 2.5, noise=noise, q_scale=q_scale)[0]
    assert float(free.data) == float(pinned.data)


def test_bc_term_vanishes_when_policy_matches_data():
    state = make_state()
    batch = make_batch(4)
    warm(state, batch)
    noise = np.random.default_rng(1).standard_normal((4, 1))
    loss, _, _, action = actor_loss(batch, state, 0.2, noise=noise)
    batch.dataset_action = action.data.copy()
    assert float(bc_actor_loss(batch, state, 0.2, 0.1, noise=noise)[0].data) == pytest.approx(float(loss.data), abs=1e-15)


def test_bc_loss_hand_example():
    state = make_state()
    batch = make_batch(5)
    warm(state, batch)
    noise = np.random.default_rng(1).standard_normal((5, 1))
    loss, _, q, action = actor_loss(batch, state, 0.2, noise=noise)
    bc = float(bc_actor_loss(batch, state, 0.2, 0.5, noise=noise)[0].data)
    expected = float(loss.data) + 0.5 * abs(np.mean(q)) * np.mean((action.data - batch.dataset_action) ** 2)
    assert bc == pytest.approx(expected, rel=1e-12)


def test_bc_without_dataset_actions_rejected():
    state = make_state()
    batch = make_batch(3)
    batch.dataset_action = None
    with pytest.raises(ConfigError):
        bc_actor_loss(batch, warm(state, batch), 0.1, 1.0)


def test_temperature_loss_fixed_point_and_sign():
    assert float(temperature_loss(np.log(0.3), np.full(4, 0.5), -0.5).data) == 0.0
    # entropy below target (log pi above -H) pushes alpha up: d loss / d log_alpha < 0
    la = T.Tensor(np.array(math.log(0.3)), requires_grad=True)
    temperature_loss(la, np.full(4, 1.0), -0.5).backward()
    assert la.grad < 0
    la = T.Tensor(np.array(math.log(0.3)), requires_grad=True)
    temperature_loss(la, np.full(4, -2.0), -0.5).backward()
    assert la.grad > 0


def test_temperature_loss_gradient():
    from gradcheck import elementwise

    logp = np.random.default_rng(0).standard_normal(8)
    assert elementwise(lambda la: temperature_loss(la, logp, -0.5), np.array(-1.3)) < 1e-5


# ---------------------------------------------------------------- target networks
def test_ema_tau_one_copies():
    a, b = make_state(seed=0), make_state(seed=1)
    ema_update(a.critics[0], b.critics[0], 1.0)
    for p, q in zip(a.critics[0].parameters(), b.critics[0].parameters()):
        np.testing.assert_array_equal(p.data, q.data)


@pytest.mark.parametrize("tau", [0.0, -0.1, 1.5])
def test_ema_invalid_tau(tau):
    s = make_state()
    with pytest.raises(ConfigError):
        ema_update(s.target_critics[0], s.critics[0], tau)


def test_ema_converges_and_keeps_unit_rows():
    a, b = make_state(seed=0), make_state(seed=1)
    for _ in range(2000):
        ema_update(a.critics[0], b.critics[0], 0.01)
    for p, q in zip(a.critics[0].parameters(), b.critics[0].parameters()):
        np.testing.assert_allclose(p.data, q.data, atol=1e-6)
        if p.unit_rows:
            np.testing.assert_allclose(np.linalg.norm(p.data, axis=1), 1.0, atol=1e-12)


# ---------------------------------------------------------------- full update
def test_zero_learning_rate_leaves_online_params():
    state = make_state()
    batch = make_batch(8)
    warm(state, batch)
    before = {n: m.state_dict() for n, m in state.modules().items() if not n.startswith("target")}
    la = state.log_alpha.data.copy()
    train_step(state, batch, lr=0.0)
    for n, sd in before.items():
        for k, v in state.modules()[n].state_dict().items():
            np.testing.assert_allclose(v, sd[k], atol=1e-15)
    assert state.log_alpha.data == la


def test_unit_rows_after_step():
    state = make_state(d_h=16)
    batch = make_batch(16)
    warm(state, batch)
    feats = []
    train_step(state, batch, lr=1e-2, feature_sink=feats)
    for p in state.constrained():
        np.testing.assert_allclose(np.linalg.norm(p.data, axis=1), 1.0, atol=1e-9)
    for name, f in feats:
        if name != "head":
            np.testing.assert_allclose(np.linalg.norm(f, axis=-1), 1.0, atol=1e-6)


def test_single_batch_critic_overfit():
    state = make_state(d_h=16)
    batch = make_batch(32, terminated=1.0)
    warm(state, batch)
    losses = [train_step(state, batch, lr=3e-3)["critic_loss"] for _ in range(200)]
    drops = sum(b < a for a, b in zip(losses, losses[1:]))
    assert losses[-1] < losses[0]
    assert drops / (len(losses) - 1) >= 0.95


def test_non_finite_loss_raises_with_record():
    state = make_state(distributional=False)
    batch = make_batch(4)
    warm(state, batch)
    batch.reward[0] = np.nan
    with pytest.raises(NumericError) as info:
        train_step(state, batch, lr=1e-3)
    assert info.value.record["loss"] == "critic"
    assert math.isnan(info.value.record["value"])


def test_hard_target_syncs_on_period():
    state = make_state(hard_target=True, hard_target_period=2)
    batch = make_batch(8)
    warm(state, batch)
    train_step(state, batch, lr=1e-2)
    w_t, w_o = state.target_critics[0].head.w2.W.data, state.critics[0].head.w2.W.data
    assert not np.array_equal(w_t, w_o)
    train_step(state, batch, lr=1e-2)
    np.testing.assert_array_equal(state.target_critics[0].head.w2.W.data, state.critics[0].head.w2.W.data)
