"""Q-switch mixture of frozen primitives.

At every behaviour step each primitive proposes one action per objective
(an objective rewrites the goal, and the observation is projected onto the
primitive's layout). The target policy adds its own noisy proposal outside
warm-up, and the online critic of the target agent picks the candidate with
the highest Q-value. With probability epsilon a uniform random action is
executed instead.
"""

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .ddpg import propose_action
from .envs import SAFE_HEIGHT, projection_indices
from .errors import ConfigError, ContractError, NumericalDivergenceError

TARGET = "target"
RANDOM = "random"
OBJECTIVE_KINDS = ("goal_override", "goal_offset_from_object", "goal_above_obstacle", "episode_goal")
DEFAULT_OFFSET = 0.06


@dataclass
class Primitive:
    """A frozen actor trained on a simpler task, adapted to a target env."""

    actor: object
    obs_norm: object
    goal_norm: object
    source_spec: object
    target_spec: object
    gripper_pad: float = -1.0
    name: str = ""
    obs_index: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.source_spec.goal_dim != self.target_spec.goal_dim:
            raise ContractError(
                f"goal dims differ: primitive {self.source_spec.goal_dim}, "
                f"target {self.target_spec.goal_dim}")
        self.obs_index = projection_indices(self.target_spec, self.source_spec)

    def act(self, target_obs, goals):
        """Deterministic actions for ``goals`` (n, g), adapted to the target action space."""
        goals = np.atleast_2d(goals)
        s = np.asarray(target_obs)[..., self.obs_index]
        s = np.broadcast_to(self.obs_norm.normalize(s), (len(goals), len(self.obs_index)))
        x = np.concatenate([s, self.goal_norm.normalize(goals)], axis=1)
        return adapt_action(self.actor(x), self.target_spec.action_dim, self.gripper_pad)


def adapt_action(actions, action_dim, pad=-1.0):
    """Pad missing trailing components with ``pad`` or truncate extra ones."""
    actions = np.atleast_2d(actions)
    n, d = actions.shape
    if d == action_dim:
        return actions
    if d > action_dim:
        return actions[:, :action_dim]
    return np.concatenate([actions, np.full((n, action_dim - d), pad)], axis=1)


@dataclass(frozen=True)
class Objective:
    kind: str
    primitive: int = 0
    offset: tuple = (0.0, 0.0, 0.0)
    point: tuple | None = None
    height: float | None = None
    name: str = ""

    def __post_init__(self):
        if self.kind not in OBJECTIVE_KINDS:
            raise ConfigError(f"unknown objective kind {self.kind!r}")
        if not np.isfinite(self.offset).all():
            raise ConfigError("objective offsets must be finite")
        if self.kind == "goal_override" and self.point is None:
            raise ConfigError("goal_override objectives need a point")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("offset", "point"):
            if d.get(key) is not None:
                d[key] = tuple(float(v) for v in d[key])
        return cls(**d)

    def to_dict(self):
        return {"kind": self.kind, "primitive": self.primitive, "offset": list(self.offset),
                "point": None if self.point is None else list(self.point),
                "height": self.height, "name": self.name}


def object_position(obs, spec):
    """Block position inside a target observation (first 3 of the object block)."""
    if not spec.has_object:
        raise ContractError(f"{spec.name} has no object to anchor an objective on")
    sl = spec.block_slices()["object"]
    return np.asarray(obs)[..., sl.start : sl.start + 3]


def objective_goal(objective, obs, g, spec):
    kind = objective.kind
    if kind == "episode_goal":
        return np.array(g, dtype=np.float64, copy=True)
    if kind == "goal_override":
        return np.array(objective.point, dtype=np.float64)
    if kind == "goal_offset_from_object":
        return object_position(obs, spec) + np.asarray(objective.offset)
    # goal_above_obstacle: midway between block and goal, lifted to a safe height
    mid = 0.5 * (object_position(obs, spec)[:2] + np.asarray(g)[:2])
    height = SAFE_HEIGHT if objective.height is None else objective.height
    return np.array([mid[0], mid[1], height])


def adjust_for_objective(obs, objective, target_spec, primitive_spec, g=None):
    """Return ``(s', g')``: the projected observation and the objective's goal.

    ``obs`` is a :class:`~qmpher.envs.GoalObservation`; ``g`` defaults to its
    desired goal.
    """
    g = obs.desired_goal if g is None else g
    s = np.asarray(obs.observation)[..., projection_indices(target_spec, primitive_spec)]
    return s, objective_goal(objective, obs.observation, g, target_spec)


@dataclass
class CandidateSet:
    actions: np.ndarray
    tags: list

    def __post_init__(self):
        if len(self.tags) == 0:
            raise ContractError("empty candidate set")
        if len(self.tags) != len(self.actions):
            raise ContractError("candidate actions and tags differ in length")

    def __len__(self):
        return len(self.tags)


@dataclass
class SelectionRecord:
    action: np.ndarray
    provenance: object
    q_values: np.ndarray | None
    random_fired: bool
    index: int = -1


def build_candidate_set(obs, g, ensemble, agent, phase="normal", rng=None,
                        warmup_includes_target=False, primitive_sigma=0.0):
    """Collect every primitive/objective proposal and, if allowed, the target's.

    ``ensemble`` is a sequence of ``(primitive, [objectives...])`` pairs.
    ``obs`` is the raw target observation vector. Primitive proposals come
    first in (k, l) order; the target proposal, when present, is last.
    """
    if phase not in ("warmup", "normal"):
        raise ContractError(f"unknown phase {phase!r}")
    actions, tags = [], []
    for k, (primitive, objectives) in enumerate(ensemble):
        if not objectives:
            continue
        goals = np.stack([objective_goal(o, obs, g, primitive.target_spec) for o in objectives])
        acts = primitive.act(obs, goals)
        if primitive_sigma > 0.0:
            acts = np.clip(acts + primitive_sigma * rng.standard_normal(acts.shape), -1.0, 1.0)
        actions.extend(acts)
        tags.extend((k, l) for l in range(len(objectives)))
    if phase == "normal" or warmup_includes_target or not tags:
        actions.append(propose_action(agent, obs, g, "noisy", rng))
        tags.append(TARGET)
    return CandidateSet(np.asarray(actions, dtype=np.float64), tags)


def q_switch_select(candidates, obs, g, critic, epsilon, rng, action_dim=None):
    """Pick the argmax-Q candidate (lowest index on ties), or a random action w.p. epsilon.

    ``critic(obs, g, actions)`` must return one Q-value per candidate row.
    """
    if len(candidates) == 0:
        raise ContractError("empty candidate set")
    action_dim = candidates.actions.shape[1] if action_dim is None else action_dim
    if rng.random() < epsilon:
        a = rng.uniform(-1.0, 1.0, size=action_dim)
        return SelectionRecord(a, RANDOM, None, True)
    q = np.asarray(critic(obs, g, candidates.actions), dtype=np.float64).ravel()
    if not np.isfinite(q).all():
        raise NumericalDivergenceError("critic produced a non-finite Q-value during selection")
    idx = int(np.argmax(q))
    return SelectionRecord(candidates.actions[idx].copy(), candidates.tags[idx], q, False, idx)


def switch_share_metrics(records):
    """Selection fractions per provenance; random events are reported apart.

    Keys: ``target``, ``primitive``, ``random`` (share of all records) and
    ``by_source`` (fractions over non-random records, summing to 1).
    """
    records = list(records)
    total = len(records)
    chosen = [r.provenance for r in records if not r.random_fired]
    n_random = total - len(chosen)
    counts = Counter(chosen)
    n = len(chosen)
    by_source = {p: c / n for p, c in sorted(counts.items(), key=lambda kv: str(kv[0]))} if n else {}
    share_target = counts.get(TARGET, 0) / n if n else 0.0
    return {
        "target": share_target,
        "primitive": (1.0 - share_target) if n else 0.0,
        "random": n_random / total if total else 0.0,
        "by_source": by_source,
    }


def agent_critic(agent):
    """Adapter giving :func:`q_switch_select` the target agent's online critic."""
    return agent.q_values


def _offsets(d):
    return [("object", (0.0, 0.0, 0.0)), ("object+x", (d, 0.0, 0.0)), ("object-x", (-d, 0.0, 0.0)),
            ("object+y", (0.0, d, 0.0)), ("object-y", (0.0, -d, 0.0))]


def objective_preset(name, offset=DEFAULT_OFFSET):
    """Shipped objective sets keyed by target task."""
    if name in ("push", "pickplace"):
        objs = [Objective("goal_offset_from_object", 0, off, name=n) for n, off in _offsets(offset)]
        objs.insert(1, Objective("episode_goal", 0, name="goal"))
        return objs
    if name == "pickobstacle":
        return [Objective("goal_above_obstacle", 0, height=SAFE_HEIGHT, name="above_obstacle"),
                Objective("episode_goal", 0, name="goal")]
    if name == "pickthrow":
        return [Objective("episode_goal", 0, name="obstacle_policy_goal"),
                Objective("goal_override", 1, point=(0.5, 0.5, SAFE_HEIGHT), name="center_elevated"),
                Objective("episode_goal", 1, name="goal")]
    raise ConfigError(f"unknown objective preset {name!r}")


def group_by_primitive(primitives, objectives):
    """``[(primitive, [objectives for it])]`` in primitive order."""
    groups = [(p, []) for p in primitives]
    for o in objectives:
        if not 0 <= o.primitive < len(primitives):
            raise ConfigError(f"objective {o.name or o.kind} references missing primitive {o.primitive}")
        groups[o.primitive][1].append(o)
    return groups


__all__ = [
    "TARGET", "RANDOM", "Primitive", "Objective", "CandidateSet", "SelectionRecord",
    "adapt_action", "adjust_for_objective", "build_candidate_set", "q_switch_select",
    "switch_share_metrics", "objective_preset", "group_by_primitive", "agent_critic",
    "object_position", "objective_goal",
]
