"""Episode replay storage with future-goal relabeling.

Transitions live in flat preallocated rings indexed by a monotonically
increasing logical counter; a slot's physical position is the counter mod
capacity. Eviction drops whole episodes from the tail so a stored
transition can always see its episode's true end, which is what future
relabeling needs. All sampling is vectorized; one Generator drives every
draw so a run's stream is reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Transition:
    """One environment step plus what the scripted controller would have
    done. ``terminal`` marks a success termination (bootstrapping stops);
    ``timeout`` marks running out the clock (bootstrapping continues)."""

    state: np.ndarray
    action: np.ndarray
    guide_action: np.ndarray
    reward: float
    next_state: np.ndarray
    achieved_goal_next: np.ndarray
    desired_goal: np.ndarray
    timeout: bool
    terminal: bool


@dataclass(frozen=True)
class HerConfig:
    """Future-strategy relabeling: with probability k/(k+1) a sampled
    transition's goal is swapped for a later achieved goal from the same
    episode (the transition's own outcome included)."""

    k: int = 4

    @property
    def relabel_prob(self) -> float:
        return self.k / (self.k + 1.0)


@dataclass
class Batch:
    """Stacked sample; ``relabeled`` marks rows whose goal was swapped and
    therefore whose stored controller action no longer matches."""

    states: np.ndarray
    actions: np.ndarray
    guide_actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    desired_goals: np.ndarray
    timeouts: np.ndarray
    terminals: np.ndarray
    relabeled: np.ndarray
    episode_ids: np.ndarray
    step_indices: np.ndarray


class ReplayBuffer:
    def __init__(self, capacity: int, state_dim: int, action_dim: int,
                 goal_dim: int, reward_fn):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.reward_fn = reward_fn
        c = self.capacity
        self._state = np.zeros((c, state_dim))
        self._action = np.zeros((c, action_dim))
        self._guide_action = np.zeros((c, action_dim))
        self._reward = np.zeros(c)
        self._next_state = np.zeros((c, state_dim))
        self._achieved_next = np.zeros((c, goal_dim))
        self._desired = np.zeros((c, goal_dim))
        self._timeout = np.zeros(c, dtype=bool)
        self._terminal = np.zeros(c, dtype=bool)
        self._episode_end = np.zeros(c, dtype=np.int64)   # logical end index
        self._episode_id = np.zeros(c, dtype=np.int64)
        self._step_index = np.zeros(c, dtype=np.int64)
        self._tail = 0          # logical
        self._head = 0          # logical
        self._episodes_stored = 0

    @property
    def size(self) -> int:
        return self._head - self._tail

    @property
    def episodes_stored(self) -> int:
        return self._episodes_stored

    def store_episode(self, episode: list[Transition]) -> None:
        length = len(episode)
        if length == 0:
            raise ValueError("refusing to store an empty episode")
        if length > self.capacity:
            raise ValueError(
                f"episode of length {length} exceeds capacity {self.capacity}"
            )
        base = self._head
        new_head = base + length
        # drop whole episodes from the tail until the new one fits
        while new_head - self._tail > self.capacity:
            self._tail = int(self._episode_end[self._tail % self.capacity])
        eid = self._episodes_stored
        for t, tr in enumerate(episode):
            p = (base + t) % self.capacity
            self._state[p] = tr.state
            self._action[p] = tr.action
            self._guide_action[p] = tr.guide_action
            self._reward[p] = tr.reward
            self._next_state[p] = tr.next_state
            self._achieved_next[p] = tr.achieved_goal_next
            self._desired[p] = tr.desired_goal
            self._timeout[p] = tr.timeout
            self._terminal[p] = tr.terminal
            self._episode_end[p] = new_head
            self._episode_id[p] = eid
            self._step_index[p] = t
        self._head = new_head
        self._episodes_stored += 1

    def sample_batch(self, n: int, her: HerConfig | None,
                     rng: np.random.Generator) -> Batch:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        logical = rng.integers(self._tail, self._head, size=n)
        pos = logical % self.capacity

        desired = self._desired[pos].copy()
        rewards = self._reward[pos].copy()
        relabeled = np.zeros(n, dtype=bool)

        if her is not None:
            relabeled = rng.random(n) < her.relabel_prob
            span = self._episode_end[pos] - logical        # >= 1
            # offsets are drawn for every row to keep the stream layout
            # independent of the mask
            future = logical + (rng.random(n) * span).astype(np.int64)
            new_goals = self._achieved_next[future % self.capacity]
            desired[relabeled] = new_goals[relabeled]
            rewards[relabeled] = self.reward_fn(
                self._achieved_next[pos][relabeled], desired[relabeled]
            )

        return Batch(
            states=self._state[pos].copy(),
            actions=self._action[pos].copy(),
            guide_actions=self._guide_action[pos].copy(),
            rewards=rewards,
            next_states=self._next_state[pos].copy(),
            desired_goals=desired,
            timeouts=self._timeout[pos].copy(),
            terminals=self._terminal[pos].copy(),
            relabeled=relabeled,
            episode_ids=self._episode_id[pos].copy(),
            step_indices=self._step_index[pos].copy(),
        )
