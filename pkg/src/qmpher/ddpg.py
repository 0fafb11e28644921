"""Goal-conditioned DDPG: actor, critic, their targets and input normalizers."""

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import ConfigError, ContractError, NumericalDivergenceError
from .nn import (
    AdamState,
    GradientBundle,
    adam_step,
    backward_cached,
    forward_cached,
    init_mlp,
    polyak_update,
)


@dataclass
class HyperParams:
    gamma: float = 0.98
    tau: float = 0.05
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    batch_size: int = 256
    epsilon: float = 0.3
    sigma: float = 0.2
    warmup_steps: int | None = None  # None: one epoch of collection
    action_l2: float = 1.0
    hidden: tuple = (256, 256, 256)
    norm_clip: float = 5.0
    norm_eps: float = 1e-2

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        checks = [
            (0.0 <= self.gamma < 1.0, "gamma must lie in [0, 1)"),
            (0.0 <= self.tau <= 1.0, "tau must lie in [0, 1]"),
            (self.actor_lr > 0 and self.critic_lr > 0, "learning rates must be positive"),
            (self.batch_size > 0, "batch_size must be positive"),
            (0.0 <= self.epsilon <= 1.0, "epsilon must lie in [0, 1]"),
            (self.sigma >= 0.0, "sigma must be non-negative"),
            (self.warmup_steps is None or self.warmup_steps >= 0, "warmup_steps must be >= 0"),
            (self.action_l2 >= 0.0, "action_l2 must be non-negative"),
            (len(self.hidden) > 0 and min(self.hidden) > 0, "hidden sizes must be positive"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown hyperparameters: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


class Normalizer:
    """Running mean/std (population) merged batch-wise with Chan's update."""

    def __init__(self, size, eps=1e-2, clip=5.0):
        self.size = size
        self.eps = eps
        self.clip = clip
        self.count = 0
        self.mean = np.zeros(size)
        self.m2 = np.zeros(size)

    @property
    def std(self):
        if self.count == 0:
            return np.ones(self.size)
        return np.maximum(np.sqrt(self.m2 / self.count), self.eps)

    def update(self, x):
        x = np.asarray(x, dtype=np.float64).reshape(-1, self.size)
        n_b = x.shape[0]
        if n_b == 0:
            return
        mean_b = x.mean(axis=0)
        m2_b = ((x - mean_b) ** 2).sum(axis=0)
        n = self.count + n_b
        delta = mean_b - self.mean
        self.mean = self.mean + delta * (n_b / n)
        self.m2 = self.m2 + m2_b + delta**2 * (self.count * n_b / n)
        self.count = n

    def normalize(self, x):
        return np.clip((np.asarray(x, dtype=np.float64) - self.mean) / self.std, -self.clip, self.clip)

    def copy(self):
        other = Normalizer(self.size, self.eps, self.clip)
        other.count, other.mean, other.m2 = self.count, self.mean.copy(), self.m2.copy()
        return other

    def state_dict(self):
        return {"count": int(self.count), "mean": self.mean.tolist(), "m2": self.m2.tolist()}

    def load_state_dict(self, d):
        mean = np.asarray(d["mean"], dtype=np.float64)
        m2 = np.asarray(d["m2"], dtype=np.float64)
        if mean.shape != (self.size,) or m2.shape != (self.size,):
            raise ContractError("normalizer state has the wrong size")
        self.count, self.mean, self.m2 = int(d["count"]), mean, m2


@dataclass
class TrainingBatch:
    obs: np.ndarray
    actions: np.ndarray
    next_obs: np.ndarray
    goals: np.ndarray
    rewards: np.ndarray
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.rewards)
        if not all(len(a) == n for a in (self.obs, self.actions, self.next_obs, self.goals)):
            raise ContractError("training batch columns have different lengths")
        if not np.isin(self.rewards, (-1.0, 0.0)).all():
            raise ContractError("rewards must lie in {-1, 0}")

    def __len__(self):
        return len(self.rewards)


class Agent:
    """Actor pi(s, g) and critic Q(s, g, a) with targets, optimizers and normalizers."""

    def __init__(self, obs_dim, goal_dim, action_dim, hyper=None, rng=None):
        self.hyper = hyper or HyperParams()
        rng = rng if rng is not None else np.random.default_rng()
        self.obs_dim, self.goal_dim, self.action_dim = obs_dim, goal_dim, action_dim
        h = list(self.hyper.hidden)
        self.actor = init_mlp([obs_dim + goal_dim, *h, action_dim], rng, "tanh")
        self.critic = init_mlp([obs_dim + goal_dim + action_dim, *h, 1], rng, "identity")
        self.obs_norm = Normalizer(obs_dim, self.hyper.norm_eps, self.hyper.norm_clip)
        self.goal_norm = Normalizer(goal_dim, self.hyper.norm_eps, self.hyper.norm_clip)
        self.set_networks(self.actor, self.critic)

    def set_networks(self, actor, critic):
        """Install online nets; targets copy them and optimizer state restarts."""
        self.actor, self.critic = actor, critic
        self.target_actor = actor.copy()
        self.target_critic = critic.copy()
        self.actor_opt = AdamState.for_net(actor, self.hyper.actor_lr)
        self.critic_opt = AdamState.for_net(critic, self.hyper.critic_lr)
        self._actor_grads = GradientBundle.zeros_like(actor)
        self._critic_grads = GradientBundle.zeros_like(critic)
        self._scratch = GradientBundle.zeros_like(critic)

    @classmethod
    def for_spec(cls, spec, hyper=None, rng=None):
        return cls(spec.observation_dim, spec.goal_dim, spec.action_dim, hyper, rng)

    def policy_input(self, s, g):
        return normalize(self, s, g)

    def q_values(self, s, g, actions, critic=None):
        """Online-critic values for several actions in one state; shape ``(n,)``."""
        actions = np.atleast_2d(actions)
        n = actions.shape[0]
        x = np.broadcast_to(normalize(self, s, g), (n, self.obs_dim + self.goal_dim))
        q = (critic or self.critic)(np.concatenate([x, actions], axis=1))[:, 0]
        if not np.isfinite(q).all():
            raise NumericalDivergenceError("critic produced a non-finite Q-value")
        return q

    def snapshot(self):
        """Read-only copy of what evaluation needs: actor and normalizers."""
        snap = Agent.__new__(Agent)
        snap.hyper = self.hyper
        snap.obs_dim, snap.goal_dim, snap.action_dim = self.obs_dim, self.goal_dim, self.action_dim
        snap.actor = self.actor.copy()
        snap.critic = self.critic.copy()
        snap.obs_norm = self.obs_norm.copy()
        snap.goal_norm = self.goal_norm.copy()
        return snap


def normalize(agent, s, g):
    """Normalized, clipped ``s || g``; works on vectors and batches."""
    return np.concatenate([agent.obs_norm.normalize(s), agent.goal_norm.normalize(g)], axis=-1)


def update_normalizer(agent, episode):
    agent.obs_norm.update(episode.obs)
    agent.goal_norm.update(episode.desired_goals)
    agent.goal_norm.update(episode.achieved_goals)


def _critic_forward(critic, x):
    if hasattr(critic, "value_and_input_grad"):
        return critic.value_and_input_grad(x)[0]
    return critic(x)[:, 0]


def td_target(batch, agent):
    """``r + gamma * Q'(s', g, pi'(s', g))`` clipped to ``[-1/(1-gamma), 0]``.

    Time-limit episodes only, so every transition bootstraps.
    """
    gamma = agent.hyper.gamma
    x_next = normalize(agent, batch.next_obs, batch.goals)
    a_next = agent.target_actor(x_next)
    q_next = _critic_forward(agent.target_critic, np.concatenate([x_next, a_next], axis=1))
    if not np.isfinite(q_next).all():
        raise NumericalDivergenceError("target critic produced a non-finite Q-value")
    y = batch.rewards + gamma * q_next
    return np.clip(y, -1.0 / (1.0 - gamma), 0.0)


def critic_loss_grad(batch, agent):
    """Mean squared TD error and its gradient w.r.t. the critic parameters."""
    y = td_target(batch, agent)
    x = np.concatenate([normalize(agent, batch.obs, batch.goals), batch.actions], axis=1)
    cache = forward_cached(agent.critic, x)
    q = cache.y[:, 0]
    if not np.isfinite(q).all():
        raise NumericalDivergenceError("critic produced a non-finite Q-value")
    err = q - y
    loss = float(np.mean(err**2))
    upstream = (2.0 / len(err)) * err[:, None]
    grads = backward_cached(agent.critic, cache, upstream, out=agent._critic_grads)
    return loss, grads


def update_critic(batch, agent):
    loss, grads = critic_loss_grad(batch, agent)
    adam_step(agent.critic, grads, agent.critic_opt)
    return loss


def actor_loss_grad(batch, agent, critic=None):
    """``-mean Q(s, g, pi(s, g)) + c * mean(pre_tanh**2)`` and its actor gradient.

    Returns ``(loss, mean_q, grads)``. ``critic`` may be any object with a
    ``value_and_input_grad(x)`` method instead of an :class:`Mlp`.
    """
    critic = critic if critic is not None else agent.critic
    x = normalize(agent, batch.obs, batch.goals)
    a_cache = forward_cached(agent.actor, x)
    actions = a_cache.y
    n, act_dim = actions.shape
    xa = np.concatenate([x, actions], axis=1)
    if hasattr(critic, "value_and_input_grad"):
        q, dq_dx = critic.value_and_input_grad(xa)
    else:
        c_cache = forward_cached(critic, xa)
        q = c_cache.y[:, 0]
        dq_dx = backward_cached(critic, c_cache, np.ones((n, 1)), out=agent._scratch).input_grad
    if not np.isfinite(q).all():
        raise NumericalDivergenceError("critic produced a non-finite Q-value")
    dloss_da = -dq_dx[:, -act_dim:] / n
    c = agent.hyper.action_l2
    pre = a_cache.pre_out
    reg_grad = (2.0 * c / pre.size) * pre if c else None
    grads = backward_cached(agent.actor, a_cache, dloss_da, pre_out_grad=reg_grad,
                            out=agent._actor_grads)
    mean_q = float(np.mean(q))
    loss = -mean_q + c * float(np.mean(pre**2))
    return loss, mean_q, grads


def update_actor(batch, agent, critic=None):
    _, mean_q, grads = actor_loss_grad(batch, agent, critic)
    adam_step(agent.actor, grads, agent.actor_opt)
    return mean_q


def update_targets(agent):
    polyak_update(agent.target_actor, agent.actor, agent.hyper.tau)
    polyak_update(agent.target_critic, agent.critic, agent.hyper.tau)


def propose_action(agent, s, g, mode="deterministic", rng=None):
    """Actor action; ``mode="noisy"`` adds N(0, sigma^2) per component and clips."""
    a = agent.actor(normalize(agent, s, g))
    if mode == "deterministic":
        return a
    if mode != "noisy":
        raise ContractError(f"unknown action mode {mode!r}")
    a = a + agent.hyper.sigma * rng.standard_normal(a.shape)
    return np.clip(a, -1.0, 1.0)
