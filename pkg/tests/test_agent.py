"""Actor-critic update machinery against hand-evaluated targets, finite
differences, and an independently coded plain-numpy reference cycle."""

import numpy as np
import pytest

import guidedrl.agent as agent_mod
from guidedrl.agent import (
    ExplorationNoise,
    Td3Agent,
    actor_update,
    behaviour_action,
    critic_targets,
    critic_update,
    save_agent,
    load_agent_networks,
    soft_update,
)
from guidedrl.envs import Observation, make_env
from guidedrl.nets import AdamState, Mlp, adam_step
from guidedrl.replay import Batch

SPEC = make_env("point_reach").spec


def rand_batch(rng, n=32):
    rewards = np.where(rng.random(n) < 0.2, 0.0, -1.0)
    terminals = (rewards == 0.0) & (rng.random(n) < 0.7)
    timeouts = (~terminals) & (rng.random(n) < 0.1)
    return Batch(
        states=rng.uniform(0, 1, (n, SPEC.state_dim)),
        actions=rng.uniform(-0.1, 0.1, (n, SPEC.action_dim)),
        guide_actions=rng.uniform(-0.1, 0.1, (n, SPEC.action_dim)),
        rewards=rewards,
        next_states=rng.uniform(0, 1, (n, SPEC.state_dim)),
        desired_goals=rng.uniform(0, 1, (n, SPEC.goal_dim)),
        timeouts=timeouts,
        terminals=terminals,
        relabeled=np.zeros(n, dtype=bool),
        episode_ids=np.zeros(n, dtype=np.int64),
        step_indices=np.zeros(n, dtype=np.int64),
    )


def constant_net(in_dim, value):
    net = Mlp([in_dim, 1], seed=0)
    net.weights[0][...] = 0.0
    net.biases[0][...] = value
    return net


def capture_grads(monkeypatch):
    """Swap adam_step for a recorder so an update op computes its gradient
    but applies nothing; returns the capture list."""
    captured = []
    monkeypatch.setattr(
        agent_mod, "adam_step", lambda net, grads, state: captured.append(grads)
    )
    return captured


def fd_params(scalar_fn, net, eps=1e-5):
    grads = []
    for p in net.parameters():
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = scalar_fn()
            flat[i] = orig - eps
            flat[i], gflat[i] = orig, (f_plus - scalar_fn()) / (2 * eps)
            flat[i] = orig
        grads.append(g)
    return grads


def assert_grads_close(bundle, numeric, tol=1e-4):
    analytic = []
    for dw, db in zip(bundle.d_weights, bundle.d_biases):
        analytic.append(dw)
        analytic.append(db)
    for a, n in zip(analytic, numeric):
        rel = np.abs(a - n) / np.maximum(1e-8, np.abs(a) + np.abs(n))
        assert rel.max() < tol


# -- critic targets -------------------------------------------------------


def test_targets_hand_cases():
    agent = Td3Agent(SPEC, hidden=(8,), target_smoothing=False, seed=0)
    in_dim = SPEC.state_dim + SPEC.goal_dim + SPEC.action_dim
    agent.target_critic_1 = constant_net(in_dim, -10.0)
    agent.target_critic_2 = constant_net(in_dim, -7.0)   # min picks -10

    rng = np.random.default_rng(0)
    batch = rand_batch(rng, n=4)
    batch.rewards[:] = -1.0
    batch.terminals[:] = [False, False, True, False]
    batch.timeouts[:] = [False, False, False, True]
    batch.rewards[2] = 0.0

    y = critic_targets(agent, batch, rng)
    assert y[0] == pytest.approx(-10.8, abs=1e-12)       # plain bootstrap
    assert y[2] == 0.0                                   # success: reward only
    assert y[3] == pytest.approx(-10.8, abs=1e-12)       # timeout bootstraps

    agent.target_critic_1 = constant_net(in_dim, -60.0)
    agent.target_critic_2 = constant_net(in_dim, -60.0)
    y = critic_targets(agent, batch, rng)
    assert y[0] == -1.0 / (1.0 - 0.98)                   # clipped at -1/(1-gamma)


def test_targets_match_plain_reference():
    agent = Td3Agent(SPEC, seed=1)
    rng_batch = np.random.default_rng(2)
    for trial in range(50):
        batch = rand_batch(rng_batch)
        y = critic_targets(agent, batch, np.random.default_rng(trial))

        # straightforward re-evaluation, same noise stream
        r2 = np.random.default_rng(trial)
        nxt = np.concatenate([batch.next_states, batch.desired_goals], axis=1)
        a = agent.target_actor.forward(nxt)
        noise = np.clip(
            agent.smoothing_sigma * r2.standard_normal(a.shape),
            -agent.smoothing_clip,
            agent.smoothing_clip,
        )
        a = np.clip(a + noise, -SPEC.action_bound, SPEC.action_bound)
        cin = np.concatenate(
            [batch.next_states, batch.desired_goals, a / SPEC.action_bound], axis=1
        )
        q = np.minimum(
            agent.target_critic_1.forward(cin)[:, 0],
            agent.target_critic_2.forward(cin)[:, 0],
        )
        ref = np.clip(
            batch.rewards + agent.gamma * (~batch.terminals) * q,
            -1.0 / (1.0 - agent.gamma), 0.0
        )
        np.testing.assert_array_equal(y, ref)


def test_targets_within_return_range():
    agent = Td3Agent(SPEC, seed=3)
    rng = np.random.default_rng(4)
    for _ in range(20):
        y = critic_targets(agent, rand_batch(rng), rng)
        assert np.all(y <= 0.0) and np.all(y >= -50.0)


def test_smoothing_toggle():
    on = Td3Agent(SPEC, seed=5, target_smoothing=True)
    off = Td3Agent(SPEC, seed=5, target_smoothing=False)
    batch = rand_batch(np.random.default_rng(6))
    y_off_a = critic_targets(off, batch, np.random.default_rng(7))
    y_off_b = critic_targets(off, batch, np.random.default_rng(8))
    np.testing.assert_array_equal(y_off_a, y_off_b)      # rng unused when off
    y_on_a = critic_targets(on, batch, np.random.default_rng(7))
    y_on_b = critic_targets(on, batch, np.random.default_rng(8))
    assert not np.array_equal(y_on_a, y_on_b)


# -- critic update --------------------------------------------------------


def test_critic_update_single_sample_loss():
    agent = Td3Agent(SPEC, seed=9)
    in_dim = SPEC.state_dim + SPEC.goal_dim + SPEC.action_dim
    agent.critic_1 = constant_net(in_dim, 0.0)
    agent.critic_2 = constant_net(in_dim, 0.0)
    agent.critic_1_opt = AdamState(agent.critic_1)
    agent.critic_2_opt = AdamState(agent.critic_2)
    batch = rand_batch(np.random.default_rng(10), n=1)
    loss = critic_update(agent, batch, np.array([-1.0]))
    assert loss == 1.0


def test_critic_update_exact_fit_stays_put():
    agent = Td3Agent(SPEC, seed=11)
    batch = rand_batch(np.random.default_rng(12))
    cin = agent.critic_input(batch.states, batch.desired_goals, batch.actions)
    y = agent.critic_1.forward(cin)[:, 0].copy()
    agent.critic_2.copy_params_from(agent.critic_1)
    agent.critic_2_opt = AdamState(agent.critic_2)
    before = [p.copy() for p in agent.critic_1.parameters()]
    loss = critic_update(agent, batch, y)
    assert loss == 0.0
    for b, p in zip(before, agent.critic_1.parameters()):
        np.testing.assert_allclose(p, b, atol=1e-9)


def test_critic_gradient_matches_fd(monkeypatch):
    agent = Td3Agent(SPEC, seed=13)
    batch = rand_batch(np.random.default_rng(14), n=8)
    y = np.random.default_rng(15).uniform(-5, 0, 8)
    captured = capture_grads(monkeypatch)
    critic_update(agent, batch, y)
    assert len(captured) == 2

    cin = agent.critic_input(batch.states, batch.desired_goals, batch.actions)

    def loss_of(net):
        return lambda: float(np.mean((net.forward(cin)[:, 0] - y) ** 2))

    assert_grads_close(captured[0], fd_params(loss_of(agent.critic_1), agent.critic_1))
    assert_grads_close(captured[1], fd_params(loss_of(agent.critic_2), agent.critic_2))


def test_critic_update_rejects_nan_targets():
    agent = Td3Agent(SPEC, seed=16)
    batch = rand_batch(np.random.default_rng(17), n=4)
    with pytest.raises(FloatingPointError):
        critic_update(agent, batch, np.array([0.0, np.nan, 0.0, 0.0]))


# -- actor update ---------------------------------------------------------


def test_actor_gradient_matches_fd(monkeypatch):
    agent = Td3Agent(SPEC, seed=18)
    batch = rand_batch(np.random.default_rng(19), n=6)
    captured = capture_grads(monkeypatch)
    loss = actor_update(agent, batch, None)
    assert len(captured) == 1

    def composite():
        ain = np.concatenate([batch.states, batch.desired_goals], axis=1)
        acts, cache = agent.actor.forward_cached(ain)
        cin = agent.critic_input(batch.states, batch.desired_goals, acts)
        q = agent.critic_1.forward(cin)[:, 0]
        z = cache.pre[-1]
        return float(np.mean(-q) + 0.01 * np.mean(np.sum(z * z, axis=1)))

    assert loss == pytest.approx(composite(), abs=1e-12)
    assert_grads_close(captured[0], fd_params(composite, agent.actor))


def test_actor_zero_preactivations_no_regularizer():
    agent = Td3Agent(SPEC, seed=20)
    # zero output layer: pre-activations vanish, q is a constant, so the
    # loss is exactly mean(-q) with zero actions
    agent.actor.weights[-1][...] = 0.0
    agent.actor.biases[-1][...] = 0.0
    batch = rand_batch(np.random.default_rng(21), n=5)
    q = agent.q1(batch.states, batch.desired_goals, np.zeros((5, 2)))
    loss = actor_update(agent, batch, None)
    assert loss == pytest.approx(float(np.mean(-q)), abs=1e-12)


def test_actor_update_moves_only_actor():
    agent = Td3Agent(SPEC, seed=22)
    batch = rand_batch(np.random.default_rng(23))
    critic_before = [p.copy() for p in agent.critic_1.parameters()]
    actor_before = [p.copy() for p in agent.actor.parameters()]
    actor_update(agent, batch, None)
    for b, p in zip(critic_before, agent.critic_1.parameters()):
        np.testing.assert_array_equal(p, b)
    assert any(
        not np.array_equal(b, p)
        for b, p in zip(actor_before, agent.actor.parameters())
    )


# -- behaviour policy and targets upkeep ----------------------------------


def test_behaviour_action_noise_free_is_policy():
    agent = Td3Agent(SPEC, seed=24)
    obs = Observation(
        state=np.array([0.3, 0.4]),
        achieved_goal=np.array([0.3, 0.4]),
        desired_goal=np.array([0.8, 0.2]),
    )
    a = behaviour_action(agent, obs, ExplorationNoise(0.0, 0.0), np.random.default_rng(25))
    np.testing.assert_array_equal(
        a, agent.actor.forward(np.concatenate([obs.state, obs.desired_goal]))
    )


def test_behaviour_action_bounds_and_mean():
    agent = Td3Agent(SPEC, seed=26)
    obs = Observation(
        state=np.array([0.5, 0.5]),
        achieved_goal=np.array([0.5, 0.5]),
        desired_goal=np.array([0.6, 0.6]),
    )
    noise = ExplorationNoise(mean=0.003, sigma=0.01)
    rng = np.random.default_rng(27)
    clean = behaviour_action(agent, obs, ExplorationNoise(0.0, 0.0), rng)
    n = 20000
    deltas = np.empty((n, 2))
    for i in range(n):
        a = behaviour_action(agent, obs, noise, rng)
        assert np.all(np.abs(a) <= SPEC.action_bound)
        deltas[i] = a - clean
    se = noise.sigma / np.sqrt(n)
    assert np.all(np.abs(deltas.mean(axis=0) - noise.mean) < 3 * se + 1e-4)


def test_exploration_noise_validation():
    with pytest.raises(ValueError):
        ExplorationNoise(0.0, -0.1)


def test_soft_update_rule():
    agent = Td3Agent(SPEC, seed=28)
    agent.actor.weights[0][...] = 1.0
    agent.target_actor.weights[0][...] = 0.0
    soft_update(agent)
    np.testing.assert_allclose(agent.target_actor.weights[0], 0.005, atol=1e-15)

    agent.polyak = 1.0
    soft_update(agent)
    for on, tg in zip(agent.actor.parameters(), agent.target_actor.parameters()):
        np.testing.assert_array_equal(on, tg)

    agent.polyak = 0.0
    agent.actor.weights[0][...] = 7.0
    before = [p.copy() for p in agent.target_actor.parameters()]
    soft_update(agent)
    for b, p in zip(before, agent.target_actor.parameters()):
        np.testing.assert_array_equal(b, p)


def test_full_cycle_matches_plain_reference():
    """One collect-free update cycle against a reference coded as the
    plainest possible numpy, same nets and fresh optimizers."""
    a1 = Td3Agent(SPEC, seed=29)
    a2 = Td3Agent(SPEC, seed=29)
    batch = rand_batch(np.random.default_rng(30), n=16)
    n = 16

    y = critic_targets(a1, batch, np.random.default_rng(31))
    critic_update(a1, batch, y)
    actor_update(a1, batch, None)
    soft_update(a1)

    # reference: targets
    r2 = np.random.default_rng(31)
    nxt = np.concatenate([batch.next_states, batch.desired_goals], axis=1)
    act = a2.target_actor.forward(nxt)
    noise = np.clip(
        a2.smoothing_sigma * r2.standard_normal(act.shape),
        -a2.smoothing_clip, a2.smoothing_clip,
    )
    act = np.clip(act + noise, -SPEC.action_bound, SPEC.action_bound)
    cin = np.concatenate(
        [batch.next_states, batch.desired_goals, act / SPEC.action_bound], axis=1
    )
    qn = np.minimum(
        a2.target_critic_1.forward(cin)[:, 0], a2.target_critic_2.forward(cin)[:, 0]
    )
    y2 = np.clip(
        batch.rewards + a2.gamma * (~batch.terminals) * qn,
        -1.0 / (1.0 - a2.gamma), 0.0,
    )
    np.testing.assert_array_equal(y, y2)

    # reference: critic regression steps
    cin = np.concatenate(
        [batch.states, batch.desired_goals, batch.actions / SPEC.action_bound], axis=1
    )
    for net, opt in ((a2.critic_1, a2.critic_1_opt), (a2.critic_2, a2.critic_2_opt)):
        q, cache = net.forward_cached(cin)
        grads = net.backward(cache, (2.0 / n) * (q - y2[:, None]))
        adam_step(net, grads, opt)

    # reference: actor step
    ain = np.concatenate([batch.states, batch.desired_goals], axis=1)
    acts, acache = a2.actor.forward_cached(ain)
    cin = np.concatenate(
        [batch.states, batch.desired_goals, acts / SPEC.action_bound], axis=1
    )
    _, qcache = a2.critic_1.forward_cached(cin)
    dcin = a2.critic_1.backward(qcache, np.full((n, 1), -1.0 / n)).d_input
    da = dcin[:, -2:] / SPEC.action_bound
    gz = (0.02 / n) * acache.pre[-1]
    adam_step(a2.actor, a2.actor.backward(acache, da, gz), a2.actor_opt)

    # reference: polyak mix
    for on, tg in (
        (a2.actor, a2.target_actor),
        (a2.critic_1, a2.target_critic_1),
        (a2.critic_2, a2.target_critic_2),
    ):
        for po, pt in zip(on.parameters(), tg.parameters()):
            pt[...] = 0.005 * po + 0.995 * pt

    for role in ("actor", "critic_1", "critic_2", "target_actor",
                 "target_critic_1", "target_critic_2"):
        for p1, p2 in zip(getattr(a1, role).parameters(), getattr(a2, role).parameters()):
            np.testing.assert_allclose(p1, p2, atol=1e-10)


def test_agent_snapshot_roundtrip(tmp_path):
    agent = Td3Agent(SPEC, seed=32)
    save_agent(agent, tmp_path / "snap")
    other = Td3Agent(SPEC, seed=33)
    load_agent_networks(other, tmp_path / "snap")
    for role in ("actor", "critic_1", "target_critic_2"):
        for p1, p2 in zip(getattr(agent, role).parameters(), getattr(other, role).parameters()):
            np.testing.assert_array_equal(p1, p2)


def test_agent_validation():
    with pytest.raises(ValueError):
        Td3Agent(SPEC, gamma=1.0)
    with pytest.raises(ValueError):
        Td3Agent(SPEC, policy_delay=0)
    with pytest.raises(ValueError):
        Td3Agent(SPEC, polyak=0.0)
