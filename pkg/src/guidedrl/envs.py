"""Deterministic goal-conditioned tasks on the unit square, plus scripted
proportional controllers for each.

All three tasks share the same contract: episode randomness comes only from
the seed handed to reset(), actions are clipped componentwise to the action
bound, reward is sparse (0 inside the goal tolerance, -1 outside), success
terminates the episode and running out the clock truncates it. Dynamics are
simple enough to integrate exactly, so identical seeds give byte-identical
trajectories.

The scripted controllers are pure functions of (state, goal). They are
deliberately imperfect to different degrees: the reaching controller always
succeeds, the pushing one gives up slightly too early, and the striking one
misjudges the table friction and overshoots on long shots.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ACTION_BOUND = 0.1
TOLERANCE = 0.05
TIME_LIMIT = 50
DT = 0.5
GUIDE_GAIN = 2.0

CONTACT_RADIUS = 0.06

# pushing guide stops once the box is within this distance of the goal;
# it is wider than the reward tolerance on purpose
PUSH_DONE_SLOP = 0.07
PUSH_STANDOFF = 0.12
PUSH_ALIGN = 0.7

SLIDE_ZONE_X = 0.35          # agent may not leave x <= SLIDE_ZONE_X
SLIDE_FRICTION = 0.15        # true deceleration of the puck
SLIDE_TRANSFER = 6.0         # puck speed per unit of striking displacement rate
SLIDE_FRICTION_GUESS = 0.88  # guide's friction estimate, as a fraction of true
SLIDE_STANDOFF = 0.1
SLIDE_ALIGN = 0.95

ENV_NAMES = ("point_reach", "planar_push", "planar_slide")


@dataclass(frozen=True)
class GoalEnvSpec:
    """Static facts about a task, enough to size networks and buffers."""

    name: str
    state_dim: int
    action_dim: int
    goal_dim: int
    action_bound: float
    tolerance: float
    time_limit: int
    dt: float


@dataclass
class Observation:
    state: np.ndarray
    achieved_goal: np.ndarray
    desired_goal: np.ndarray


@dataclass
class StepResult:
    observation: Observation
    reward: float
    done: bool
    success: bool
    timeout: bool


def goal_distance(achieved, desired) -> np.ndarray:
    a = np.asarray(achieved, dtype=np.float64)
    d = np.asarray(desired, dtype=np.float64)
    return np.linalg.norm(a - d, axis=-1)


class GoalEnv:
    """Shared stepping/termination logic; subclasses provide dynamics."""

    spec: GoalEnvSpec

    def __init__(self):
        self._state: np.ndarray | None = None
        self._goal: np.ndarray | None = None
        self._steps = 0
        self._done = True

    # -- subclass hooks ---------------------------------------------------

    def _draw(self, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def _advance(self, state: np.ndarray, action: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def achieved_goal_of(self, state) -> np.ndarray:
        """Project a state (or batch of states) onto goal space."""
        raise NotImplementedError

    # -- shared contract --------------------------------------------------

    def compute_reward(self, achieved, desired) -> np.ndarray:
        """Sparse reward: 0 within tolerance of the goal, -1 outside.

        Broadcasts over leading axes so relabeled batches are one call.
        """
        dist = goal_distance(achieved, desired)
        return np.where(dist <= self.spec.tolerance, 0.0, -1.0)

    def reset(self, episode_seed: int) -> Observation:
        rng = np.random.default_rng(episode_seed)
        self._state, self._goal = self._draw(rng)
        self._steps = 0
        self._done = False
        return self._observe()

    def step(self, action) -> StepResult:
        if self._done or self._state is None:
            raise RuntimeError("step() called on a finished episode; reset() first")
        a = np.asarray(action, dtype=np.float64)
        if a.shape != (self.spec.action_dim,):
            raise ValueError(
                f"action shape {a.shape} != ({self.spec.action_dim},)"
            )
        if not np.isfinite(a).all():
            raise FloatingPointError("non-finite action")
        a = np.clip(a, -self.spec.action_bound, self.spec.action_bound)

        self._state = self._advance(self._state, a)
        self._steps += 1
        achieved = self.achieved_goal_of(self._state)
        reward = float(self.compute_reward(achieved, self._goal))
        success = reward == 0.0
        timeout = (not success) and self._steps >= self.spec.time_limit
        self._done = success or timeout
        return StepResult(self._observe(), reward, self._done, success, timeout)

    def _observe(self) -> Observation:
        return Observation(
            state=self._state.copy(),
            achieved_goal=self.achieved_goal_of(self._state).copy(),
            desired_goal=self._goal.copy(),
        )


class PointReachEnv(GoalEnv):
    """Velocity-controlled point agent; the goal is its own position."""

    def __init__(self):
        super().__init__()
        self.spec = GoalEnvSpec(
            name="point_reach",
            state_dim=2,
            action_dim=2,
            goal_dim=2,
            action_bound=ACTION_BOUND,
            tolerance=TOLERANCE,
            time_limit=TIME_LIMIT,
            dt=DT,
        )

    def _draw(self, rng):
        while True:
            start = rng.uniform(0.0, 1.0, size=2)
            goal = rng.uniform(0.0, 1.0, size=2)
            if goal_distance(start, goal) > 2.0 * TOLERANCE:
                return start, goal

    def _advance(self, state, action):
        return np.clip(state + self.spec.dt * action, 0.0, 1.0)

    def achieved_goal_of(self, state):
        return np.asarray(state, dtype=np.float64)[..., 0:2]


class PlanarPushEnv(GoalEnv):
    """Agent drags a box: while they overlap at the start of a step, the
    box copies the agent's displacement. State is [agent, box]."""

    def __init__(self):
        super().__init__()
        self.spec = GoalEnvSpec(
            name="planar_push",
            state_dim=4,
            action_dim=2,
            goal_dim=2,
            action_bound=ACTION_BOUND,
            tolerance=TOLERANCE,
            time_limit=TIME_LIMIT,
            dt=DT,
        )

    def _draw(self, rng):
        while True:
            agent = rng.uniform(0.0, 1.0, size=2)
            box = rng.uniform(0.25, 0.75, size=2)
            goal = rng.uniform(0.1, 0.9, size=2)
            if goal_distance(box, goal) <= 3.0 * TOLERANCE:
                continue
            if goal_distance(agent, box) <= CONTACT_RADIUS:
                continue
            return np.concatenate([agent, box]), goal

    def _advance(self, state, action):
        agent, box = state[0:2], state[2:4]
        in_contact = goal_distance(agent, box) <= CONTACT_RADIUS
        new_agent = np.clip(agent + self.spec.dt * action, 0.0, 1.0)
        new_box = box
        if in_contact:
            new_box = np.clip(box + (new_agent - agent), 0.0, 1.0)
        return np.concatenate([new_agent, new_box])

    def achieved_goal_of(self, state):
        return np.asarray(state, dtype=np.float64)[..., 2:4]


class PlanarSlideEnv(GoalEnv):
    """Agent confined to a strike zone imparts velocity to a puck, which
    then decelerates under constant friction. State is
    [agent, puck, puck_velocity]; the goal region lies outside the zone.

    A step starting within contact range replaces the puck's velocity with
    transfer * displacement / dt, so standing still catches the puck dead.
    Friction is integrated exactly, including the stop inside a step, and
    hitting a wall stops the puck where it lands.
    """

    def __init__(self):
        super().__init__()
        self.spec = GoalEnvSpec(
            name="planar_slide",
            state_dim=6,
            action_dim=2,
            goal_dim=2,
            action_bound=ACTION_BOUND,
            tolerance=TOLERANCE,
            time_limit=TIME_LIMIT,
            dt=DT,
        )

    def _draw(self, rng):
        agent = np.array([rng.uniform(0.0, 0.08), rng.uniform(0.3, 0.7)])
        puck = np.array([rng.uniform(0.15, 0.3), rng.uniform(0.3, 0.7)])
        goal = np.array([rng.uniform(0.45, 0.95), rng.uniform(0.1, 0.9)])
        return np.concatenate([agent, puck, np.zeros(2)]), goal

    def _advance(self, state, action):
        agent, puck, vel = state[0:2], state[2:4], state[4:6]
        new_agent = agent + self.spec.dt * action
        new_agent[0] = np.clip(new_agent[0], 0.0, SLIDE_ZONE_X)
        new_agent[1] = np.clip(new_agent[1], 0.0, 1.0)

        if goal_distance(agent, puck) <= CONTACT_RADIUS:
            vel = SLIDE_TRANSFER * (new_agent - agent) / self.spec.dt

        puck, vel = _integrate_friction(puck, vel, self.spec.dt, SLIDE_FRICTION)
        clamped = np.clip(puck, 0.0, 1.0)
        if not np.array_equal(clamped, puck):
            vel = np.zeros(2)
        return np.concatenate([new_agent, clamped, vel])

    def achieved_goal_of(self, state):
        return np.asarray(state, dtype=np.float64)[..., 2:4]


def _integrate_friction(pos, vel, dt, mu):
    """Advance a decelerating point mass by dt, stopping exactly when the
    speed reaches zero rather than overshooting past it."""
    speed = float(np.linalg.norm(vel))
    if speed == 0.0:
        return pos.copy(), vel.copy()
    direction = vel / speed
    t_stop = speed / mu
    if t_stop >= dt:
        travel = speed * dt - 0.5 * mu * dt * dt
        new_speed = speed - mu * dt
    else:
        travel = speed * speed / (2.0 * mu)
        new_speed = 0.0
    return pos + travel * direction, direction * new_speed


# -- scripted controllers -------------------------------------------------


def _norm_clip(v: np.ndarray, bound: float) -> np.ndarray:
    """Clip by euclidean norm so direction survives; batched over rows."""
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    scale = np.where(norm > bound, bound / np.maximum(norm, 1e-12), 1.0)
    return v * scale


def _unit(v: np.ndarray, fallback=None) -> np.ndarray:
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    safe = np.maximum(norm, 1e-12)
    u = v / safe
    if fallback is not None:
        u = np.where(norm > 1e-12, u, fallback)
    return u


class Guide:
    """A stateless controller: action is a pure function of (state, goal)."""

    def action(self, state: np.ndarray, goal: np.ndarray) -> np.ndarray:
        return self.action_batch(state[None, :], goal[None, :])[0]

    def action_batch(self, states: np.ndarray, goals: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class PointReachGuide(Guide):
    """Proportional drive straight at the goal; lands exactly once the
    command drops below the bound."""

    def action_batch(self, states, goals):
        return _norm_clip(GUIDE_GAIN * (goals - states[:, 0:2]), ACTION_BOUND)


class PlanarPushGuide(Guide):
    """Three-stage box pusher: swing behind the box, close in, then drive
    the box at the goal. Stops for good once the box is within its own
    done slop, which is looser than the reward tolerance."""

    def action_batch(self, states, goals):
        agent = states[:, 0:2]
        box = states[:, 2:4]
        to_goal = goals - box
        done = np.linalg.norm(to_goal, axis=-1) <= PUSH_DONE_SLOP

        push_dir = _unit(to_goal, fallback=np.array([1.0, 0.0]))
        contact = np.linalg.norm(agent - box, axis=-1) <= CONTACT_RADIUS
        behind = np.sum(_unit(box - agent) * push_dir, axis=-1) >= PUSH_ALIGN

        deliver = _norm_clip(GUIDE_GAIN * to_goal, ACTION_BOUND)
        engage = _norm_clip(GUIDE_GAIN * (box - agent), ACTION_BOUND)
        staging = box - PUSH_STANDOFF * push_dir
        approach = _norm_clip(GUIDE_GAIN * (staging - agent), ACTION_BOUND)

        act = np.where(behind[:, None], engage, approach)
        act = np.where(contact[:, None], deliver, act)
        act = np.where(done[:, None], np.zeros(2), act)
        return act


class PlanarSlideGuide(Guide):
    """Strikes the puck toward the goal with a speed chosen for a friction
    coefficient it underestimates, so long shots fall short of the goal.

    Waits while the puck moves; once it is out of reach of the strike zone
    there is nothing left to do and the controller goes quiet.
    """

    def action_batch(self, states, goals):
        agent = states[:, 0:2]
        puck = states[:, 2:4]
        vel = states[:, 4:6]
        n = states.shape[0]

        moving = np.linalg.norm(vel, axis=-1) > 0.0
        out_of_reach = puck[:, 0] > SLIDE_ZONE_X + CONTACT_RADIUS

        to_goal = goals - puck
        dist = np.linalg.norm(to_goal, axis=-1)
        aim = _unit(to_goal, fallback=np.array([1.0, 0.0]))

        # strike displacement sized for the (misjudged) friction
        mu_guess = SLIDE_FRICTION_GUESS * SLIDE_FRICTION
        v_want = np.sqrt(2.0 * mu_guess * dist)
        step_want = np.minimum(v_want * DT / SLIDE_TRANSFER, ACTION_BOUND * DT)
        strike = (step_want / DT)[:, None] * aim

        staging = puck - SLIDE_STANDOFF * aim
        approach = _norm_clip(GUIDE_GAIN * (staging - agent), ACTION_BOUND)

        lined_up = np.sum(_unit(puck - agent) * aim, axis=-1) >= SLIDE_ALIGN
        near = np.linalg.norm(agent - puck, axis=-1) <= SLIDE_STANDOFF + 0.02

        act = np.where((lined_up & near)[:, None], strike, approach)
        act = np.where((moving | out_of_reach)[:, None], np.zeros(2), act)
        return act


def make_env(name: str) -> GoalEnv:
    if name == "point_reach":
        return PointReachEnv()
    if name == "planar_push":
        return PlanarPushEnv()
    if name == "planar_slide":
        return PlanarSlideEnv()
    raise ValueError(f"unknown environment {name!r}; choose from {ENV_NAMES}")


def make_guide(name: str) -> Guide:
    if name == "point_reach":
        return PointReachGuide()
    if name == "planar_push":
        return PlanarPushGuide()
    if name == "planar_slide":
        return PlanarSlideGuide()
    raise ValueError(f"unknown environment {name!r}; choose from {ENV_NAMES}")


def make_test_set(name: str, n_episodes: int, seed: int) -> list[int]:
    """Distinct episode seeds for a fixed evaluation set. Every run that
    evaluates on (name, n_episodes, seed) sees the same episodes."""
    rng = np.random.default_rng(np.random.SeedSequence([hash_name(name), seed]))
    seeds: list[int] = []
    seen = set()
    while len(seeds) < n_episodes:
        s = int(rng.integers(0, 2**62))
        if s not in seen:
            seen.add(s)
            seeds.append(s)
    return seeds


def hash_name(name: str) -> int:
    """Stable small integer from an environment name (hash() is salted
    per process, which would break cross-run determinism)."""
    h = 0
    for ch in name:
        h = (h * 131 + ord(ch)) % (2**31)
    return h


def run_guide_episode(env: GoalEnv, guide: Guide, episode_seed: int) -> bool:
    """Roll one scripted episode; True on success. Used for measuring
    controller proficiency and for tests."""
    obs = env.reset(episode_seed)
    while True:
        res = env.step(guide.action(obs.state, obs.desired_goal))
        if res.done:
            return res.success
        obs = res.observation
