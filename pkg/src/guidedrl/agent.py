"""Twin-critic deterministic actor-critic with delayed policy updates.

The actor maps (state, goal) to a bounded action through a scaled tanh
head. Both critics score (state, goal, action) with the action normalized
by its bound. Regression targets use the lesser of the two target critics,
optional clipped smoothing noise on the target action, and are clipped to
the return range a {-1, 0} reward admits. Success terminations stop
bootstrapping; time-limit terminations do not.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .envs import GoalEnvSpec
from .nets import AdamState, Mlp, MlpCache, adam_step, load_params_into, save_mlp

PREACT_REG = 0.01   # L2 strength on the actor's output-layer pre-activations


@dataclass(frozen=True)
class ExplorationNoise:
    mean: float = 0.0
    sigma: float = 0.0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")


@dataclass
class PolicyEval:
    """One actor forward pass shared between the guidance ops and the
    actor update so the fused training step never recomputes it."""

    actions: np.ndarray
    cache: MlpCache


@dataclass
class GuidanceTerm:
    """Extra actor-loss contribution: a scalar already averaged over the
    batch and its gradient with respect to the policy actions."""

    loss: float
    grad_actions: np.ndarray


class Td3Agent:
    def __init__(
        self,
        env_spec: GoalEnvSpec,
        hidden: tuple[int, ...] = (64, 64),
        gamma: float = 0.98,
        policy_delay: int = 2,
        polyak: float = 0.005,
        target_smoothing: bool = True,
        smoothing_sigma: float = 0.2,
        smoothing_clip: float = 0.5,
        learning_rate: float = 1e-3,
        seed: int = 0,
    ):
        if not 0.0 <= gamma < 1.0:
            raise ValueError("gamma must be in [0, 1)")
        if policy_delay < 1:
            raise ValueError("policy_delay must be >= 1")
        if not 0.0 < polyak <= 1.0:
            raise ValueError("polyak must be in (0, 1]")
        self.spec = env_spec
        self.gamma = float(gamma)
        self.policy_delay = int(policy_delay)
        self.polyak = float(polyak)
        self.target_smoothing = bool(target_smoothing)
        # smoothing parameters scale with the action bound
        self.smoothing_sigma = float(smoothing_sigma) * env_spec.action_bound
        self.smoothing_clip = float(smoothing_clip) * env_spec.action_bound
        self.q_min = -1.0 / (1.0 - gamma)
        self.q_max = 0.0
        self.update_counter = 0

        in_actor = env_spec.state_dim + env_spec.goal_dim
        in_critic = in_actor + env_spec.action_dim
        s_actor, s_c1, s_c2 = net_seeds(seed)
        self.actor = Mlp(
            [in_actor, *hidden, env_spec.action_dim],
            output_activation="tanh",
            output_scale=env_spec.action_bound,
            seed=s_actor,
        )
        self.critic_1 = Mlp([in_critic, *hidden, 1], seed=s_c1)
        self.critic_2 = Mlp([in_critic, *hidden, 1], seed=s_c2)
        self.target_actor = self.actor.copy()
        self.target_critic_1 = self.critic_1.copy()
        self.target_critic_2 = self.critic_2.copy()
        self.actor_opt = AdamState(self.actor, learning_rate)
        self.critic_1_opt = AdamState(self.critic_1, learning_rate)
        self.critic_2_opt = AdamState(self.critic_2, learning_rate)

    # -- input plumbing ---------------------------------------------------

    def actor_input(self, states, goals) -> np.ndarray:
        return np.concatenate(
            [np.atleast_2d(states), np.atleast_2d(goals)], axis=1
        )

    def critic_input(self, states, goals, actions) -> np.ndarray:
        return critic_input(self.spec.action_bound, states, goals, actions)

    def policy(self, states, goals) -> np.ndarray:
        return self.actor.forward(self.actor_input(states, goals))

    def policy_eval(self, states, goals) -> PolicyEval:
        actions, cache = self.actor.forward_cached(self.actor_input(states, goals))
        return PolicyEval(actions=actions, cache=cache)

    def q1(self, states, goals, actions) -> np.ndarray:
        return self.critic_1.forward(self.critic_input(states, goals, actions))[:, 0]


def critic_input(action_bound: float, states, goals, actions) -> np.ndarray:
    """Value-network input convention shared by the agent's critics and
    the guide's value network: state, goal, action scaled to unit range."""
    return np.concatenate(
        [
            np.atleast_2d(states),
            np.atleast_2d(goals),
            np.atleast_2d(actions) / action_bound,
        ],
        axis=1,
    )


def net_seeds(seed: int) -> tuple[int, int, int]:
    """Three decorrelated construction seeds from one experiment seed."""
    state = np.random.SeedSequence(seed).generate_state(3)
    return int(state[0]), int(state[1]), int(state[2])


def critic_targets(agent: Td3Agent, batch, rng: np.random.Generator) -> np.ndarray:
    """Clipped twin-min regression targets.

    Smoothing noise (when enabled) is clipped Gaussian added to the target
    policy's action. Rows flagged terminal experienced a goal success, so
    their target is the reward alone; timeout rows keep bootstrapping.
    """
    next_in = agent.actor_input(batch.next_states, batch.desired_goals)
    next_actions = agent.target_actor.forward(next_in)
    if agent.target_smoothing:
        noise = np.clip(
            agent.smoothing_sigma * rng.standard_normal(next_actions.shape),
            -agent.smoothing_clip,
            agent.smoothing_clip,
        )
        next_actions = np.clip(
            next_actions + noise, -agent.spec.action_bound, agent.spec.action_bound
        )
    cin = agent.critic_input(batch.next_states, batch.desired_goals, next_actions)
    q1 = agent.target_critic_1.forward(cin)[:, 0]
    q2 = agent.target_critic_2.forward(cin)[:, 0]
    q_next = np.minimum(q1, q2)
    y = batch.rewards + agent.gamma * (~batch.terminals) * q_next
    return np.clip(y, agent.q_min, agent.q_max)


def critic_update(agent: Td3Agent, batch, y: np.ndarray) -> float:
    """One Adam step on both critics against shared targets y; returns the
    pre-update mean of the two mean-squared errors."""
    cin = agent.critic_input(batch.states, batch.desired_goals, batch.actions)
    n = cin.shape[0]
    losses = []
    for net, opt in (
        (agent.critic_1, agent.critic_1_opt),
        (agent.critic_2, agent.critic_2_opt),
    ):
        q, cache = net.forward_cached(cin)
        err = q[:, 0] - y
        loss = float(np.mean(err * err))
        if not np.isfinite(loss):
            raise FloatingPointError(f"critic loss became {loss}; aborting")
        grads = net.backward(cache, (2.0 / n) * err[:, None])
        adam_step(net, grads, opt)
        losses.append(loss)
    return 0.5 * (losses[0] + losses[1])


def actor_update(
    agent: Td3Agent,
    batch,
    guidance_term: GuidanceTerm | None = None,
    policy: PolicyEval | None = None,
    q_eval: tuple[np.ndarray, MlpCache] | None = None,
) -> float:
    """One Adam step on the actor.

    Loss per sample: -Q1(s, g, pi(s, g)) plus any guidance contribution
    plus an L2 penalty on the output-layer pre-activations. Only critic 1
    drives the policy gradient. ``policy`` lets the caller pass an actor
    forward pass it already ran for the guidance ops, and ``q_eval`` a
    cached critic-1 evaluation of those same policy actions.
    """
    if policy is None:
        policy = agent.policy_eval(batch.states, batch.desired_goals)
    n = policy.actions.shape[0]

    if q_eval is None:
        cin = agent.critic_input(batch.states, batch.desired_goals, policy.actions)
        q_eval = agent.critic_1.forward_cached(cin)
    q, q_cache = q_eval
    q_loss = float(np.mean(-q[:, 0]))

    # d(mean -q)/d(critic input), action slice only, undoing the bound scale
    d_cin = agent.critic_1.backward(q_cache, np.full((n, 1), -1.0 / n)).d_input
    grad_actions = d_cin[:, -agent.spec.action_dim:] / agent.spec.action_bound

    loss = q_loss
    if guidance_term is not None:
        loss += guidance_term.loss
        grad_actions = grad_actions + guidance_term.grad_actions

    z = policy.cache.pre[-1]
    loss += PREACT_REG * float(np.mean(np.sum(z * z, axis=1)))
    grad_preact = (2.0 * PREACT_REG / n) * z

    if not np.isfinite(loss):
        raise FloatingPointError(f"actor loss became {loss}; aborting")
    grads = agent.actor.backward(policy.cache, grad_actions, grad_preact)
    adam_step(agent.actor, grads, agent.actor_opt)
    return loss


def behaviour_action(
    agent: Td3Agent, obs, noise: ExplorationNoise, rng: np.random.Generator
) -> np.ndarray:
    """Policy action plus Gaussian exploration noise, clipped to bounds."""
    a = agent.actor.forward(np.concatenate([obs.state, obs.desired_goal]))
    if noise.sigma > 0.0 or noise.mean != 0.0:
        a = a + noise.mean + noise.sigma * rng.standard_normal(a.shape)
    return np.clip(a, -agent.spec.action_bound, agent.spec.action_bound)


def soft_update(agent: Td3Agent) -> None:
    """target <- polyak * online + (1 - polyak) * target, elementwise."""
    tau = agent.polyak
    for online, target in (
        (agent.actor, agent.target_actor),
        (agent.critic_1, agent.target_critic_1),
        (agent.critic_2, agent.target_critic_2),
    ):
        for p_on, p_tg in zip(online.parameters(), target.parameters()):
            p_tg *= 1.0 - tau
            p_tg += tau * p_on


ROLE_FILES = {
    "actor": "actor.mlp",
    "critic_1": "critic_1.mlp",
    "critic_2": "critic_2.mlp",
    "target_actor": "target_actor.mlp",
    "target_critic_1": "target_critic_1.mlp",
    "target_critic_2": "target_critic_2.mlp",
}


def save_agent(agent: Td3Agent, directory) -> None:
    """One parameter file per network, named by role."""
    os.makedirs(directory, exist_ok=True)
    for role, fname in ROLE_FILES.items():
        save_mlp(getattr(agent, role), os.path.join(directory, fname))


def load_agent_networks(agent: Td3Agent, directory) -> None:
    """Load all six role files into a compatibly shaped agent."""
    for role, fname in ROLE_FILES.items():
        load_params_into(getattr(agent, role), os.path.join(directory, fname))
