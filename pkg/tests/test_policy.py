import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from leo_rrm.features import N_ACTIONS, NONE, OBS_DIM, Observation
from leo_rrm.netsim import Transition
from leo_rrm.policy import (CheckpointError, MLP, Minibatch, PolicyParameters, TrainingError,
                            a2c_update, actor_forward, actor_loss_and_grads, critic_forward,
                            critic_loss_and_grads, load_checkpoint, masked_softmax,
                            save_checkpoint, select_action, td_targets)


def random_batch(rng, m=32, terminal_frac=0.3):
    states = rng.normal(size=(m, OBS_DIM))
    masks = rng.random((m, N_ACTIONS)) < 0.6
    masks[:, NONE] = True
    actions = np.array([rng.choice(np.flatnonzero(row)) for row in masks])
    return Minibatch(states, masks, actions, rng.normal(scale=5.0, size=m),
                     rng.normal(size=(m, OBS_DIM)), rng.random(m) < terminal_frac)


def central_diff(f, net, eps=1e-6):
    theta = net.flat()
    g = np.empty_like(theta)
    for k in range(theta.size):
        orig = theta[k]
        theta[k] = orig + eps
        net.set_flat(theta)
        up = f()
        theta[k] = orig - eps
        net.set_flat(theta)
        down = f()
        theta[k] = orig
        g[k] = (up - down) / (2 * eps)
    net.set_flat(theta)
    return g


def flat_grads(grads):
    return np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in grads])


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)


def test_mlp_shapes_and_flat_round_trip():
    net = MLP((16, 64, 64, 5), rng=0)
    assert net.n_params == 16 * 64 + 64 + 64 * 64 + 64 + 64 * 5 + 5
    theta = net.flat()
    other = MLP((16, 64, 64, 5), rng=1)
    other.set_flat(theta)
    x = np.random.default_rng(0).normal(size=(3, 16))
    assert np.array_equal(net.forward(x), other.forward(x))


def test_init_is_seeded():
    a, b = PolicyParameters.init(seed=4), PolicyParameters.init(seed=4)
    assert np.array_equal(a.actor.flat(), b.actor.flat())
    assert not np.array_equal(a.actor.flat(), PolicyParameters.init(seed=5).actor.flat())
    bound = 1 / np.sqrt(16)
    assert np.abs(a.actor.layers[0][0]).max() <= bound


@pytest.mark.parametrize("entropy", [0.0, 0.05])
def test_actor_gradient_matches_finite_difference(entropy):
    rng = np.random.default_rng(0)
    params = PolicyParameters.init(seed=1, entropy_coef=entropy)
    batch = random_batch(rng, m=8)
    W = rng.normal(size=len(batch))
    _, grads = actor_loss_and_grads(params, batch, W)
    numeric = central_diff(lambda: actor_loss_and_grads(params, batch, W)[0], params.actor)
    assert rel_err(flat_grads(grads), numeric) < 1e-4


def test_critic_gradient_matches_finite_difference():
    rng = np.random.default_rng(1)
    params = PolicyParameters.init(seed=2)
    batch = random_batch(rng, m=8)
    R, _ = td_targets(params, batch)
    _, grads = critic_loss_and_grads(params, batch, R)
    numeric = central_diff(lambda: critic_loss_and_grads(params, batch, R)[0], params.critic)
    assert rel_err(flat_grads(grads), numeric) < 1e-4


def test_td_targets_stop_at_terminal():
    rng = np.random.default_rng(3)
    params = PolicyParameters.init(seed=0, gamma=0.5)
    batch = random_batch(rng, m=16)
    R, W = td_targets(params, batch)
    v_next = critic_forward(params, batch.next_states)
    v = critic_forward(params, batch.states)
    expect = batch.rewards + 0.5 * v_next * ~batch.dones
    np.testing.assert_allclose(R, expect)
    np.testing.assert_allclose(W, expect - v)


def test_lagged_target_syncs_on_schedule():
    rng = np.random.default_rng(0)
    params = PolicyParameters.init(seed=0, target_mode="lagged", target_sync_every=3,
                                   lr_critic=0.05)
    frozen = params.target_critic().flat().copy()
    for _ in range(2):
        a2c_update(params, random_batch(rng))
    assert np.array_equal(params.target_critic().flat(), frozen)
    a2c_update(params, random_batch(rng))
    assert np.array_equal(params.target_critic().flat(), params.critic.flat())


def test_update_moves_toward_lower_critic_loss():
    rng = np.random.default_rng(7)
    params = PolicyParameters.init(seed=0, lr_critic=1e-2)
    batch = random_batch(rng, m=64)
    R, _ = td_targets(params, batch)
    before = critic_loss_and_grads(params, batch, R)[0]
    a2c_update(params, batch)
    after = critic_loss_and_grads(params, batch, R)[0]
    assert after < before and params.updates == 1


def test_adam_option_updates():
    rng = np.random.default_rng(7)
    params = PolicyParameters.init(seed=0, optimizer="adam")
    before = params.actor.flat().copy()
    a2c_update(params, random_batch(rng))
    assert not np.array_equal(before, params.actor.flat())


def test_non_finite_update_raises():
    rng = np.random.default_rng(0)
    params = PolicyParameters.init(seed=0)
    batch = random_batch(rng)
    batch.rewards[0] = np.nan
    with pytest.raises(TrainingError):
        a2c_update(params, batch)


@settings(max_examples=200, deadline=None)
@given(logits=st.lists(st.floats(-50, 50), min_size=5, max_size=5),
       mask_bits=st.integers(0, 15))
def test_masked_softmax_properties(logits, mask_bits):
    mask = np.array([(mask_bits >> k) & 1 for k in range(4)] + [1], dtype=bool)
    p = masked_softmax(np.array(logits), mask)
    assert np.all(p[~mask] == 0.0)
    assert abs(p.sum() - 1.0) < 1e-9
    assert np.all(p[mask] >= 0)


def test_masked_softmax_needs_a_valid_action():
    with pytest.raises(ValueError):
        masked_softmax(np.zeros(5), np.zeros(5, dtype=bool))


def test_sampling_frequencies_match_probabilities():
    rng = np.random.default_rng(11)
    params = PolicyParameters.init(seed=3)
    x = rng.normal(size=OBS_DIM) * 2
    mask = np.array([1, 0, 1, 1, 1], dtype=bool)
    obs = Observation(x, mask)
    probs = actor_forward(params, obs)
    draws = np.array([select_action(params, obs, "sample", rng) for _ in range(40_000)])
    freq = np.bincount(draws, minlength=5) / draws.size
    assert freq[1] == 0.0
    assert np.max(np.abs(freq - probs)) < 0.01


def test_greedy_picks_argmax_and_lowest_tie():
    params = PolicyParameters.init(seed=0)
    for layer in params.actor.layers:
        layer[0][:] = 0.0
        layer[1][:] = 0.0
    obs = Observation(np.zeros(OBS_DIM), np.array([0, 1, 1, 0, 1], dtype=bool))
    assert select_action(params, obs, "greedy") == 1


def test_withheld_orientation_is_ignored():
    params = PolicyParameters.init(seed=0, withhold_orientation=True)
    x = np.random.default_rng(0).normal(size=OBS_DIM)
    y = x.copy()
    y[[2, 6, 10, 14]] = [2, -1, 1, 1]
    mask = np.ones(5, dtype=bool)
    assert np.array_equal(actor_forward(params, x, mask), actor_forward(params, y, mask))
    assert critic_forward(params, x) == critic_forward(params, y)


def test_checkpoint_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(0)
    params = PolicyParameters.init(seed=9, lr_actor=1e-3, optimizer="adam")
    a2c_update(params, random_batch(rng))
    path = save_checkpoint(params, tmp_path / "ck.json")
    back = load_checkpoint(path)
    assert np.array_equal(back.actor.flat(), params.actor.flat())
    assert np.array_equal(back.critic.flat(), params.critic.flat())
    assert (back.lr_actor, back.optimizer, back.updates) == (1e-3, "adam", 1)
    doc = json.loads(path.read_text())
    assert doc["format"] == "leo-rrm-checkpoint" and doc["version"] == 1


def test_checkpoint_shape_mismatch(tmp_path):
    path = save_checkpoint(PolicyParameters.init(seed=0), tmp_path / "ck.json")
    doc = json.loads(path.read_text())
    doc["actor"]["sizes"][0] = 12
    path.write_text(json.dumps(doc))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
    doc["architecture"]["input"] = 12
    path.write_text(json.dumps(doc))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "missing.json")


def test_minibatch_from_transitions():
    s = np.arange(16.0)
    m = np.ones(5, dtype=bool)
    ts = [Transition(s, m, 2, 1.5, s + 1, m, False), Transition(s, m, 4, 0.0, s * 0, m, True)]
    b = Minibatch.from_transitions(ts)
    assert b.states.shape == (2, 16) and b.actions.tolist() == [2, 4]
    assert b.dones.tolist() == [False, True]
