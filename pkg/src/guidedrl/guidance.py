"""Guide-value pretraining, the gated behaviour-cloning term, and critic
initialization from the guide's value network.

The central object is a filter deciding, per minibatch sample, whether the
scripted controller's action is worth imitating. The preferred rule
compares a frozen value network fit to the controller's own data (left
side) against the learner's first critic at the policy's action (right
side); the naive rule uses the learner's critic on both sides. The
behaviour-cloning term is a masked mean of euclidean action distances,
added to the actor loss with a configurable weight that can also decay
linearly with environment steps.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .agent import GuidanceTerm, PolicyEval, Td3Agent, critic_input
from .envs import GoalEnv, Guide
from .nets import AdamState, Mlp, MlpConfigError, adam_step, load_mlp, save_mlp
from .replay import HerConfig, ReplayBuffer, Transition

VARIANTS = (
    "static_qg",
    "naive",
    "linear",
    "none",
    "static_qg_no_bc",
    "naive_with_init",
)

# variants whose filter compares the frozen guide value network
_STATIC_FILTER = ("static_qg", "static_qg_no_bc")
# variants whose filter uses the learner's critic on both sides
_NAIVE_FILTER = ("naive", "naive_with_init")
# variants that never contribute a BC term
_ZERO_BC = ("none", "static_qg_no_bc")


@dataclass
class GuideQ:
    """Frozen value network of the scripted controller."""

    network: Mlp
    frozen: bool = True


@dataclass
class GuidanceConfig:
    variant: str = "static_qg"
    bc_weight: float = 2.0
    linear_T: int = 125000
    init_from_qg: bool | None = None     # None: variant's natural default
    relabel_requery: bool = True         # re-ask the guide at relabeled goals

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.bc_weight < 0:
            raise ValueError("bc_weight must be nonnegative")
        if self.variant == "linear" and self.linear_T <= 0:
            raise ValueError("linear decay needs linear_T > 0")
        if self.init_from_qg is None:
            self.init_from_qg = self.variant in (
                "static_qg", "static_qg_no_bc", "naive_with_init"
            )

    @property
    def needs_guide_q(self) -> bool:
        return self.variant in _STATIC_FILTER or bool(self.init_from_qg)

    @property
    def uses_guide_collection(self) -> bool:
        """Whether the scripted controller is queried while collecting."""
        return self.variant != "none"


@dataclass
class FilterStats:
    pass_fraction: float
    bc_loss_value: float


def q_filter_mask(
    cfg: GuidanceConfig,
    batch,
    guide_q: GuideQ | None,
    agent: Td3Agent,
    policy: PolicyEval | None = None,
    own_q: np.ndarray | None = None,
) -> np.ndarray:
    """Per-sample imitation gate; strict inequality, ties do not imitate.

    ``policy`` lets the caller share an actor forward pass, and ``own_q``
    a critic-1 evaluation of those policy actions it already has; the
    policy-side value always comes from critic 1.
    """
    n = batch.states.shape[0]
    if cfg.variant == "linear":
        return np.ones(n, dtype=bool)
    if cfg.variant == "none":
        return np.zeros(n, dtype=bool)

    if own_q is None:
        if policy is None:
            policy = agent.policy_eval(batch.states, batch.desired_goals)
        own_q = agent.critic_1.forward(
            agent.critic_input(batch.states, batch.desired_goals, policy.actions)
        )[:, 0]

    guide_in = agent.critic_input(
        batch.states, batch.desired_goals, batch.guide_actions
    )
    if cfg.variant in _STATIC_FILTER:
        if guide_q is None:
            raise ValueError(f"variant {cfg.variant} requires a guide value network")
        lhs = guide_q.network.forward(guide_in)[:, 0]
    else:
        lhs = agent.critic_1.forward(guide_in)[:, 0]
    return lhs > own_q


def bc_coefficient(cfg: GuidanceConfig, env_steps: int) -> float:
    """Weight on the BC term at a point in training."""
    if env_steps < 0:
        raise ValueError("env_steps must be nonnegative")
    if cfg.variant in _ZERO_BC:
        return 0.0
    if cfg.variant == "linear":
        return cfg.bc_weight * max(0.0, 1.0 - env_steps / cfg.linear_T)
    return cfg.bc_weight


def bc_loss(
    batch,
    mask: np.ndarray,
    coefficient: float,
    actor: Mlp,
    policy: PolicyEval | None = None,
) -> tuple[float, np.ndarray, FilterStats]:
    """Masked mean euclidean distance between controller and policy
    actions, times the coefficient.

    Returns (loss, gradient w.r.t. the policy actions, stats). The norm's
    gradient at zero distance is taken as zero. The mean (not the raw sum)
    makes the weight batch-size invariant.
    """
    if mask.shape[0] != batch.states.shape[0]:
        raise ValueError("mask length does not match batch size")
    if policy is None:
        acts = actor.forward(
            np.concatenate([batch.states, batch.desired_goals], axis=1)
        )
    else:
        acts = policy.actions
    n = acts.shape[0]
    diff = batch.guide_actions - acts
    norms = np.linalg.norm(diff, axis=1)
    loss = coefficient * float(np.mean(mask * norms))
    # d||g - a||/da = (a - g)/||g - a||, masked, zero-safe at the kink
    safe = np.where(norms > 0.0, norms, 1.0)
    grad = (coefficient / n) * (mask / safe)[:, None] * (-diff)
    stats = FilterStats(
        pass_fraction=float(np.mean(mask)), bc_loss_value=loss
    )
    return loss, grad, stats


def guidance_for_batch(
    cfg: GuidanceConfig,
    batch,
    guide_q: GuideQ | None,
    agent: Td3Agent,
    env_steps: int,
    policy: PolicyEval | None = None,
    own_q: np.ndarray | None = None,
) -> tuple[GuidanceTerm | None, FilterStats]:
    """Assemble the actor-loss contribution for one batch.

    A zero coefficient still evaluates and reports the filter (so its
    pass fraction stays observable) but contributes no term.
    """
    if cfg.variant == "none":
        return None, FilterStats(0.0, 0.0)
    coeff = bc_coefficient(cfg, env_steps)
    mask = q_filter_mask(cfg, batch, guide_q, agent, policy, own_q)
    if coeff == 0.0:
        return None, FilterStats(float(np.mean(mask)), 0.0)
    loss, grad, stats = bc_loss(batch, mask, coeff, agent.actor, policy)
    return GuidanceTerm(loss=loss, grad_actions=grad), stats


def init_agent_from_guide_q(agent: Td3Agent, guide_q: GuideQ) -> None:
    """Copy the guide's value parameters into both online critics and both
    target critics, resetting the critic optimizers."""
    if guide_q.network.layer_sizes != agent.critic_1.layer_sizes:
        raise MlpConfigError(
            f"guide value network {guide_q.network.layer_sizes} does not match "
            f"critic architecture {agent.critic_1.layer_sizes}"
        )
    for critic in (
        agent.critic_1, agent.critic_2, agent.target_critic_1, agent.target_critic_2
    ):
        critic.copy_params_from(guide_q.network)
    agent.critic_1_opt = AdamState(agent.critic_1, agent.critic_1_opt.learning_rate)
    agent.critic_2_opt = AdamState(agent.critic_2, agent.critic_2_opt.learning_rate)


def save_guide_q(guide_q: GuideQ, path) -> None:
    save_mlp(guide_q.network, path)


def load_guide_q(path) -> GuideQ:
    return GuideQ(network=load_mlp(path), frozen=True)


# -- pretraining ----------------------------------------------------------


@dataclass
class PretrainConfig:
    method: str = "sarsa"            # or "mc": regress on observed returns
    hidden: tuple[int, ...] = (64, 64)
    gamma: float = 0.98
    learning_rate: float = 1e-3
    batch_size: int = 100
    polyak: float = 0.005
    her_k: int = 4
    noise_sigma_frac: float = 0.1    # exploration noise, fraction of bound
    collect_block: int = 1000        # env steps per alternation
    train_block: int = 1000          # gradient steps per alternation
    buffer_capacity: int = 200000
    holdout_every: int = 10          # every n-th episode held out
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("sarsa", "mc"):
            raise ValueError(f"unknown pretraining method {self.method!r}")


@dataclass
class PretrainReport:
    residual_history: list[float]    # held-out TD residual per checkpoint
    guide_ever_succeeded: bool
    env_steps: int


def pretrain_guide_q(
    env: GoalEnv, controller: Guide, budget_steps: int, cfg: PretrainConfig
) -> tuple[GuideQ, PretrainReport]:
    """Fit a value network to the scripted controller's own behaviour.

    Collection runs the controller with Gaussian exploration noise for
    state coverage. The default fit is 1-step on-policy regression
    y = r + gamma * Q_target(s', g, controller(s', g)) with the same
    clipping and timeout-bootstrap rules as agent training, future-goal
    relabeling included, and a soft-updated target copy. The "mc" method
    instead regresses on observed discounted returns (no relabeling).
    """
    if budget_steps <= 0:
        raise ValueError("budget_steps must be positive")
    spec = env.spec
    rng = np.random.default_rng(cfg.seed)
    in_dim = spec.state_dim + spec.goal_dim + spec.action_dim
    net = Mlp([in_dim, *cfg.hidden, 1], seed=int(rng.integers(2**31)))
    target = net.copy()
    opt = AdamState(net, cfg.learning_rate)
    q_min = -1.0 / (1.0 - cfg.gamma)
    sigma = cfg.noise_sigma_frac * spec.action_bound
    her = HerConfig(k=cfg.her_k)

    buffer = ReplayBuffer(
        cfg.buffer_capacity, spec.state_dim, spec.action_dim, spec.goal_dim,
        reward_fn=env.compute_reward,
    )
    mc_inputs: list[np.ndarray] = []      # "mc" method: plain regression set
    mc_targets: list[np.ndarray] = []
    holdout: list[Transition] = []

    steps = 0
    episodes = 0
    ever_succeeded = False
    residuals: list[float] = []

    def sarsa_step():
        batch = buffer.sample_batch(cfg.batch_size, her, rng)
        next_guide = controller.action_batch(batch.next_states, batch.desired_goals)
        q_next = target.forward(
            critic_input(
                spec.action_bound, batch.next_states, batch.desired_goals, next_guide
            )
        )[:, 0]
        y = np.clip(
            batch.rewards + cfg.gamma * (~batch.terminals) * q_next, q_min, 0.0
        )
        cin = critic_input(
            spec.action_bound, batch.states, batch.desired_goals, batch.actions
        )
        fit_step(cin, y)

    def mc_step():
        inputs = np.concatenate(mc_inputs)
        targets = np.concatenate(mc_targets)
        pick = rng.integers(0, inputs.shape[0], size=cfg.batch_size)
        fit_step(inputs[pick], targets[pick])

    def fit_step(cin, y):
        q, cache = net.forward_cached(cin)
        err = q[:, 0] - y
        grads = net.backward(cache, (2.0 / cfg.batch_size) * err[:, None])
        adam_step(net, grads, opt)
        for p_on, p_tg in zip(net.parameters(), target.parameters()):
            p_tg *= 1.0 - cfg.polyak
            p_tg += cfg.polyak * p_on

    while steps < budget_steps:
        collected = 0
        while collected < cfg.collect_block and steps < budget_steps:
            episode, success = _rollout(env, controller, sigma, rng)
            episodes += 1
            ever_succeeded = ever_succeeded or success
            if cfg.holdout_every and episodes % cfg.holdout_every == 0:
                holdout.extend(episode)
            elif cfg.method == "sarsa":
                buffer.store_episode(episode)
            else:
                cin, g = _episode_returns(episode, spec, cfg.gamma, q_min)
                mc_inputs.append(cin)
                mc_targets.append(g)
            collected += len(episode)
            steps += len(episode)

        if buffer.size == 0 and not mc_inputs:
            continue
        for _ in range(cfg.train_block):
            sarsa_step() if cfg.method == "sarsa" else mc_step()

        if holdout:
            residuals.append(_holdout_residual(holdout, net, controller, spec, cfg, q_min))

    if not ever_succeeded:
        warnings.warn(
            "controller never reached a goal within the pretraining budget; "
            "the value network still encodes its expected return",
            stacklevel=2,
        )
    return GuideQ(network=net, frozen=True), PretrainReport(
        residual_history=residuals,
        guide_ever_succeeded=ever_succeeded,
        env_steps=steps,
    )


def _rollout(env, controller, sigma, rng):
    obs = env.reset(int(rng.integers(2**62)))
    episode: list[Transition] = []
    while True:
        action = controller.action(obs.state, obs.desired_goal)
        if sigma > 0.0:
            action = np.clip(
                action + sigma * rng.standard_normal(action.shape),
                -env.spec.action_bound,
                env.spec.action_bound,
            )
        res = env.step(action)
        episode.append(
            Transition(
                state=obs.state,
                action=action,
                guide_action=action,
                reward=res.reward,
                next_state=res.observation.state,
                achieved_goal_next=res.observation.achieved_goal,
                desired_goal=obs.desired_goal,
                timeout=res.timeout,
                terminal=res.success,
            )
        )
        obs = res.observation
        if res.done:
            return episode, res.success


def _episode_returns(episode, spec, gamma, q_min):
    """Observed discounted return-to-go per transition, clipped; timeout
    truncation is taken at face value (the simple-regression tradeoff)."""
    states = np.stack([t.state for t in episode])
    actions = np.stack([t.action for t in episode])
    desired = np.stack([t.desired_goal for t in episode])
    g = 0.0
    returns = np.empty(len(episode))
    for t in range(len(episode) - 1, -1, -1):
        g = episode[t].reward + gamma * g
        returns[t] = g
    cin = critic_input(spec.action_bound, states, desired, actions)
    return cin, np.clip(returns, q_min, 0.0)


def _holdout_residual(holdout, net, controller, spec, cfg, q_min) -> float:
    states = np.stack([t.state for t in holdout])
    actions = np.stack([t.action for t in holdout])
    rewards = np.array([t.reward for t in holdout])
    next_states = np.stack([t.next_state for t in holdout])
    desired = np.stack([t.desired_goal for t in holdout])
    terminals = np.array([t.terminal for t in holdout])
    next_guide = controller.action_batch(next_states, desired)
    q_next = net.forward(
        critic_input(spec.action_bound, next_states, desired, next_guide)
    )[:, 0]
    y = np.clip(rewards + cfg.gamma * (~terminals) * q_next, q_min, 0.0)
    q = net.forward(critic_input(spec.action_bound, states, desired, actions))[:, 0]
    return float(np.mean(np.abs(q - y)))
