"""Episode replay with hindsight goal relabeling ("future" strategy).

Relabeling happens at sample time: a stored transition t keeps its
original goal with probability ``1 / (k_future + 1)`` and otherwise gets
the achieved goal of a uniformly drawn step ``t' in [t, T-1]`` of the same
episode, after which the reward is recomputed.
"""

from dataclasses import dataclass

import numpy as np

from .ddpg import TrainingBatch
from .errors import ContractError


@dataclass
class Episode:
    """One fixed-horizon rollout.

    ``obs`` and ``achieved_goals`` have ``T + 1`` rows (initial state
    included), so the achieved goal produced by step t is
    ``achieved_goals[t + 1]``.
    """

    obs: np.ndarray
    actions: np.ndarray
    achieved_goals: np.ndarray
    desired_goals: np.ndarray
    rewards: np.ndarray

    @property
    def horizon(self):
        return len(self.actions)

    def validate(self):
        T = self.horizon
        if not (len(self.obs) == T + 1 and len(self.achieved_goals) == T + 1
                and len(self.desired_goals) == T and len(self.rewards) == T):
            raise ContractError("episode arrays do not share one horizon")


def recompute_reward(achieved, goal, reward_fn):
    """Reward seam for relabeling; ``reward_fn`` is usually ``env.compute_reward``."""
    return reward_fn(achieved, goal)


class ReplayBuffer:
    def __init__(self, obs_dim, action_dim, goal_dim, horizon, capacity=10_000, k_future=4,
                 rng=None):
        if capacity <= 0 or horizon <= 0 or k_future < 0:
            raise ContractError("capacity and horizon must be positive, k_future >= 0")
        self.obs_dim, self.action_dim, self.goal_dim = obs_dim, action_dim, goal_dim
        self.horizon = horizon
        self.capacity = capacity
        self.k_future = k_future
        self.rng = rng if rng is not None else np.random.default_rng()
        T = horizon
        self.obs = np.zeros((capacity, T + 1, obs_dim))
        self.actions = np.zeros((capacity, T, action_dim))
        self.achieved_goals = np.zeros((capacity, T + 1, goal_dim))
        self.desired_goals = np.zeros((capacity, T, goal_dim))
        self.rewards = np.zeros((capacity, T))
        self.size = 0
        self._next = 0
        self.n_stored = 0

    @property
    def future_p(self):
        return self.k_future / (self.k_future + 1.0)

    def __len__(self):
        return self.size

    def stored_floats(self):
        arrays = (self.obs, self.actions, self.achieved_goals, self.desired_goals, self.rewards)
        return sum(a.size for a in arrays)

    def store_episode(self, episode):
        episode.validate()
        T = self.horizon
        shapes = {
            "obs": (T + 1, self.obs_dim),
            "actions": (T, self.action_dim),
            "achieved_goals": (T + 1, self.goal_dim),
            "desired_goals": (T, self.goal_dim),
            "rewards": (T,),
        }
        for name, shape in shapes.items():
            got = np.shape(getattr(episode, name))
            if got != shape:
                raise ContractError(f"episode.{name} has shape {got}, buffer expects {shape}")
        i = self._next
        self.obs[i] = episode.obs
        self.actions[i] = episode.actions
        self.achieved_goals[i] = episode.achieved_goals
        self.desired_goals[i] = episode.desired_goals
        self.rewards[i] = episode.rewards
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.n_stored += 1

    def episode(self, age):
        """Stored episode by insertion order among those still held (0 = oldest)."""
        if not 0 <= age < self.size:
            raise IndexError(age)
        start = self._next if self.size == self.capacity else 0
        i = (start + age) % self.capacity
        return Episode(self.obs[i].copy(), self.actions[i].copy(), self.achieved_goals[i].copy(),
                       self.desired_goals[i].copy(), self.rewards[i].copy())

    def sample(self, batch_size, reward_fn):
        return sample_with_her(self, batch_size, reward_fn)


def sample_with_her(buffer, batch_size, reward_fn):
    """Uniform (episode, t) sample with future-goal relabeling.

    ``batch.info`` records ``episode``, ``t``, ``future_t`` and the boolean
    ``relabeled`` mask so callers can audit where each goal came from.
    """
    if buffer.size == 0:
        raise ContractError("cannot sample from an empty replay buffer")
    rng = buffer.rng
    T = buffer.horizon
    ep = rng.integers(0, buffer.size, size=batch_size)
    t = rng.integers(0, T, size=batch_size)
    relabel = rng.uniform(size=batch_size) < buffer.future_p
    future_t = t + np.floor(rng.uniform(size=batch_size) * (T - t)).astype(int)
    goals = buffer.desired_goals[ep, t].copy()
    goals[relabel] = buffer.achieved_goals[ep[relabel], future_t[relabel] + 1]
    achieved = buffer.achieved_goals[ep, t + 1]
    rewards = np.asarray(recompute_reward(achieved, goals, reward_fn), dtype=np.float64)
    return TrainingBatch(
        obs=buffer.obs[ep, t],
        actions=buffer.actions[ep, t],
        next_obs=buffer.obs[ep, t + 1],
        goals=goals,
        rewards=rewards,
        info={"episode": ep, "t": t, "future_t": np.where(relabel, future_t, -1),
              "relabeled": relabel, "achieved": achieved},
    )


def store_episode(buffer, episode):
    buffer.store_episode(episode)
