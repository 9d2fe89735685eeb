"""Training loop, evaluation, and cross-seed curve aggregation.

A run alternates fixed blocks: collect whole episodes until the env-step
counter crosses a block boundary, then do one gradient step per collected
step. Evaluation fires at the same kind of boundary; each metrics row
reports the boundary value (not the exact step count, which can overshoot
by part of an episode) so rows from different seeds line up on one grid.

Everything deterministic lives in metrics.csv and the network snapshot;
wall-clock times go to a timing.csv sidecar so reruns of the same seed
produce byte-identical primary outputs.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass

import numpy as np

from .agent import (
    ExplorationNoise,
    Td3Agent,
    actor_update,
    behaviour_action,
    critic_targets,
    critic_update,
    save_agent,
    soft_update,
)
from .config import ExperimentConfig, config_to_text, output_root, run_dir
from .envs import GoalEnv, make_env, make_guide, make_test_set
from .guidance import (
    GuidanceConfig,
    guidance_for_batch,
    init_agent_from_guide_q,
    load_guide_q,
)
from .replay import HerConfig, ReplayBuffer, Transition

METRICS_FILE = "metrics.csv"
TIMING_FILE = "timing.csv"
CONFIG_FILE = "config.resolved.cfg"
SNAPSHOT_DIR = "snapshot"

STAT_COLUMNS = (
    "success_rate",
    "mean_bc_loss",
    "mean_filter_fraction",
    "mean_critic_loss",
    "mean_actor_loss",
)


@dataclass
class MetricsRow:
    env_steps: int
    success_rate: float
    mean_bc_loss: float
    mean_filter_fraction: float
    mean_critic_loss: float
    mean_actor_loss: float
    wall_seconds: float = 0.0


def _fmt(x: float) -> str:
    return repr(float(x))


def write_metrics_header(fh) -> None:
    fh.write("env_steps," + ",".join(STAT_COLUMNS) + "\n")


def write_metrics_row(fh, row: MetricsRow) -> None:
    vals = [_fmt(getattr(row, c)) for c in STAT_COLUMNS]
    fh.write(f"{row.env_steps}," + ",".join(vals) + "\n")
    fh.flush()


def read_metrics(path) -> list[MetricsRow]:
    """Parse a metrics file; wall times are joined in from the timing
    sidecar next to it when one exists."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    header = lines[0].split(",")
    expected = ["env_steps", *STAT_COLUMNS]
    if header != expected:
        raise ValueError(f"unexpected metrics header {header} in {path}")
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        rows.append(
            MetricsRow(int(parts[0]), *(float(p) for p in parts[1:]))
        )
    timing = os.path.join(os.path.dirname(path), TIMING_FILE)
    if os.path.exists(timing):
        walls = {}
        with open(timing) as fh:
            for ln in list(fh)[1:]:
                if ln.strip():
                    step_s, wall_s = ln.split(",")
                    walls[int(step_s)] = float(wall_s)
        for row in rows:
            row.wall_seconds = walls.get(row.env_steps, 0.0)
    return rows


# -- the training loop ----------------------------------------------------


@dataclass
class _Window:
    """Accumulators for the stats reported per evaluation interval."""

    critic_losses: list
    actor_losses: list
    bc_losses: list
    filter_fracs: list

    @classmethod
    def empty(cls):
        return cls([], [], [], [])

    def means(self):
        def m(xs):
            return float(np.mean(xs)) if xs else 0.0

        return (
            m(self.bc_losses),
            m(self.filter_fracs),
            m(self.critic_losses),
            m(self.actor_losses),
        )


def gradient_step(
    agent: Td3Agent,
    buffer: ReplayBuffer,
    gcfg: GuidanceConfig,
    guide,
    guide_q,
    her: HerConfig,
    batch_size: int,
    env_steps: int,
    rng: np.random.Generator,
    window: _Window,
) -> None:
    """One fused critic step, plus the delayed actor and target step.

    On actor steps the actor forward pass and the critic-1 evaluation of
    its actions are each computed once and shared by the imitation gate,
    the imitation loss, and the policy-gradient update. Controller
    actions are only consulted there, so relabeled rows get theirs
    re-queried at the new goal there too.
    """
    batch = buffer.sample_batch(batch_size, her, rng)
    y = critic_targets(agent, batch, rng)
    window.critic_losses.append(critic_update(agent, batch, y))
    agent.update_counter += 1
    if agent.update_counter % agent.policy_delay == 0:
        if gcfg.uses_guide_collection and gcfg.relabel_requery:
            idx = batch.relabeled
            if idx.any():
                batch.guide_actions[idx] = guide.action_batch(
                    batch.states[idx], batch.desired_goals[idx]
                )
        policy = agent.policy_eval(batch.states, batch.desired_goals)
        q, q_cache = agent.critic_1.forward_cached(
            agent.critic_input(batch.states, batch.desired_goals, policy.actions)
        )
        term, fstats = guidance_for_batch(
            gcfg, batch, guide_q, agent, env_steps, policy, own_q=q[:, 0]
        )
        window.actor_losses.append(
            actor_update(agent, batch, term, policy, q_eval=(q, q_cache))
        )
        window.bc_losses.append(fstats.bc_loss_value)
        window.filter_fracs.append(fstats.pass_fraction)
        soft_update(agent)


def collect_episode(
    env: GoalEnv,
    agent: Td3Agent,
    guide,
    noise: ExplorationNoise,
    rng: np.random.Generator,
) -> list[Transition]:
    """Roll one behaviour-policy episode.

    The controller's actions are recorded but never executed, so they are
    filled in with a single batched query once the episode is complete.
    """
    obs = env.reset(int(rng.integers(1 << 62)))
    zero_guide = np.zeros(env.spec.action_dim)
    episode = []
    while True:
        action = behaviour_action(agent, obs, noise, rng)
        res = env.step(action)
        episode.append(
            Transition(
                state=obs.state,
                action=action,
                guide_action=zero_guide,
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
            break
    if guide is not None:
        states = np.array([t.state for t in episode])
        goals = np.array([t.desired_goal for t in episode])
        for t, guide_action in zip(episode, guide.action_batch(states, goals)):
            t.guide_action = guide_action
    return episode


def evaluate(agent: Td3Agent, env: GoalEnv, episode_seeds) -> float:
    """Deterministic-policy success rate over a fixed episode set."""
    wins = 0
    for seed in episode_seeds:
        obs = env.reset(seed)
        while True:
            a = agent.actor.forward(
                np.concatenate([obs.state, obs.desired_goal])
            )
            res = env.step(a)
            obs = res.observation
            if res.done:
                wins += int(res.success)
                break
    return wins / len(episode_seeds)


def run_experiment(
    config: ExperimentConfig, seed: int, verbose: bool = False
) -> str:
    """Train one (variant, seed) run; returns its output directory.

    Layout: <root>/<env>__<variant>/seed_<k>/ with metrics.csv, a
    timing.csv sidecar, the resolved config, and a final snapshot/ of all
    six networks. Metrics rows are flushed as they are produced, so an
    aborted run leaves every completed interval on disk.
    """
    gcfg = GuidanceConfig(
        variant=config.variant,
        bc_weight=config.bc_weight,
        linear_T=config.linear_T,
        init_from_qg=config.resolved_init_from_qg(),
        relabel_requery=config.relabel_requery,
    )
    guide_q = None
    if gcfg.needs_guide_q:
        if not config.guide_q_path:
            raise FileNotFoundError(
                f"variant {config.variant!r} needs guide_q_path in the config"
            )
        if not os.path.exists(config.guide_q_path):
            raise FileNotFoundError(
                f"guide value network not found: {config.guide_q_path}"
            )
        guide_q = load_guide_q(config.guide_q_path)

    env = make_env(config.env)
    eval_env = make_env(config.env)
    guide = make_guide(config.env) if gcfg.uses_guide_collection else None
    test_seeds = make_test_set(
        config.env, config.n_test_episodes, config.test_set_seed
    )

    agent = Td3Agent(
        env.spec,
        hidden=config.hidden,
        gamma=config.gamma,
        policy_delay=config.policy_delay,
        polyak=config.polyak,
        target_smoothing=config.target_smoothing,
        learning_rate=config.learning_rate,
        seed=seed,
    )
    if gcfg.init_from_qg:
        init_agent_from_guide_q(agent, guide_q)

    buffer = ReplayBuffer(
        config.buffer_capacity,
        env.spec.state_dim,
        env.spec.action_dim,
        env.spec.goal_dim,
        env.compute_reward,
    )
    her = HerConfig(config.her_k)
    noise = ExplorationNoise(
        mean=config.exploration_mean,
        sigma=config.exploration_sigma_frac * env.spec.action_bound,
    )
    rng = np.random.default_rng(seed)

    rdir = run_dir(output_root(config), config.env, config.variant, seed)
    os.makedirs(rdir, exist_ok=True)
    with open(os.path.join(rdir, CONFIG_FILE), "w") as fh:
        fh.write(config_to_text(config))

    steps_done = 0
    next_train = config.collect_block
    next_eval = config.eval_period
    window = _Window.empty()
    t0 = time.perf_counter()

    metrics_path = os.path.join(rdir, METRICS_FILE)
    with open(metrics_path, "w") as mfh, \
            open(os.path.join(rdir, TIMING_FILE), "w") as tfh:
        write_metrics_header(mfh)
        tfh.write("env_steps,wall_seconds\n")
        while steps_done < config.total_steps:
            episode = collect_episode(env, agent, guide, noise, rng)
            buffer.store_episode(episode)
            steps_done += len(episode)
            while steps_done >= next_train:
                for _ in range(config.train_block):
                    gradient_step(
                        agent, buffer, gcfg, guide, guide_q, her,
                        config.batch_size, next_train, rng, window,
                    )
                next_train += config.collect_block
            while steps_done >= next_eval:
                rate = evaluate(agent, eval_env, test_seeds)
                bc, frac, critic, actor = window.means()
                row = MetricsRow(next_eval, rate, bc, frac, critic, actor)
                write_metrics_row(mfh, row)
                tfh.write(f"{next_eval},{time.perf_counter() - t0!r}\n")
                tfh.flush()
                if verbose:
                    print(
                        f"[{config.env}/{config.variant}/seed {seed}] "
                        f"steps {next_eval}: success {rate:.3f}",
                        flush=True,
                    )
                window = _Window.empty()
                next_eval += config.eval_period

    save_agent(agent, os.path.join(rdir, SNAPSHOT_DIR))
    return rdir


# -- cross-seed aggregation -----------------------------------------------


@dataclass
class AggregateCurve:
    """Mean and sample standard deviation per column on a shared grid."""

    env_steps: np.ndarray
    mean: dict
    std: dict
    n_seeds: int


def aggregate_seeds(metrics_paths) -> AggregateCurve:
    """Combine per-seed metrics files that share an evaluation grid.

    Misaligned grids are an error, not something to interpolate over.
    Values at each grid point are sorted before reducing so the output is
    bitwise independent of the order the files are listed in.
    """
    paths = list(metrics_paths)
    if not paths:
        raise ValueError("no metrics files to aggregate")
    per_seed = [read_metrics(p) for p in paths]
    grid = np.array([row.env_steps for row in per_seed[0]], dtype=np.int64)
    for path, rows in zip(paths[1:], per_seed[1:]):
        other = np.array([row.env_steps for row in rows], dtype=np.int64)
        if other.shape != grid.shape or (other != grid).any():
            raise ValueError(
                f"evaluation grid of {path} does not match {paths[0]}"
            )
    mean, std = {}, {}
    for col in STAT_COLUMNS:
        stack = np.array(
            [[getattr(row, col) for row in rows] for rows in per_seed]
        )
        stack = np.sort(stack, axis=0)
        mean[col] = np.mean(stack, axis=0)
        if len(paths) > 1:
            std[col] = np.std(stack, axis=0, ddof=1)
        else:
            std[col] = np.zeros(grid.shape[0])
    return AggregateCurve(grid, mean, std, len(paths))


AGGREGATE_FILE = "aggregate.csv"


def write_aggregate(curve: AggregateCurve, path) -> None:
    cols = []
    for c in STAT_COLUMNS:
        cols.extend([f"{c}_mean", f"{c}_std"])
    with open(path, "w") as fh:
        fh.write(f"# n_seeds = {curve.n_seeds}\n")
        fh.write("env_steps," + ",".join(cols) + "\n")
        for i, step in enumerate(curve.env_steps):
            vals = []
            for c in STAT_COLUMNS:
                vals.append(_fmt(curve.mean[c][i]))
                vals.append(_fmt(curve.std[c][i]))
            fh.write(f"{int(step)}," + ",".join(vals) + "\n")


def read_aggregate(path) -> AggregateCurve:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    n_seeds = 0
    if lines and lines[0].startswith("#"):
        n_seeds = int(lines[0].partition("=")[2])
        lines = lines[1:]
    body = [ln.split(",") for ln in lines[1:]]
    grid = np.array([int(r[0]) for r in body], dtype=np.int64)
    mean, std = {}, {}
    for j, col in enumerate(STAT_COLUMNS):
        mean[col] = np.array([float(r[1 + 2 * j]) for r in body])
        std[col] = np.array([float(r[2 + 2 * j]) for r in body])
    return AggregateCurve(grid, mean, std, n_seeds)


def discover_seed_metrics(variant_dir) -> list[str]:
    """metrics.csv paths under seed_* children, seed-sorted."""
    found = []
    for name in os.listdir(variant_dir):
        if name.startswith("seed_"):
            path = os.path.join(variant_dir, name, METRICS_FILE)
            if os.path.exists(path):
                found.append((int(name.split("_", 1)[1]), path))
    return [p for _, p in sorted(found)]
