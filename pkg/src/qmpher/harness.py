"""Training and evaluation orchestration.

One ``train`` call runs N epochs of M episodes each. Behaviour actions come
from the noisy target policy (``her``), the Q-switch over primitives
(``qmp_her``) or a fixed primitive-then-actor schedule
(``scripted_curriculum``). After every ``episodes_per_update`` episodes
outside warm-up the agent runs ``cycles_per_update`` critic/actor steps on
hindsight-relabeled batches followed by one Polyak update of the targets;
each such block counts as one policy update.
"""

import csv
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, load_primitive, save_checkpoint
from .ddpg import (
    Agent,
    HyperParams,
    propose_action,
    update_actor,
    update_critic,
    update_normalizer,
    update_targets,
)
from .envs import SAFE_HEIGHT, make_env
from .errors import ConfigError, NumericalDivergenceError
from .qmp import (
    RANDOM,
    TARGET,
    Objective,
    SelectionRecord,
    build_candidate_set,
    group_by_primitive,
    objective_goal,
    objective_preset,
    q_switch_select,
    switch_share_metrics,
)
from .replay import Episode, ReplayBuffer, sample_with_her

log = logging.getLogger(__name__)

ALGORITHMS = ("her", "qmp_her", "scripted_curriculum")
METRIC_COLUMNS = ("epoch", "policy_updates", "env_steps", "eval_success_rate", "mean_q",
                  "critic_loss", "share_target", "share_primitive", "share_random", "wall_time_s")
OUTPUT_ROOT_ENV = "QMPHER_OUTPUT_ROOT"


@dataclass
class RunConfig:
    env: str = "reach_toy"
    algorithm: str = "her"
    primitives: list = field(default_factory=list)
    objective_preset: str | None = None
    objectives: list | None = None
    n_epochs: int = 50
    episodes_per_epoch: int = 50
    episodes_per_update: int = 2
    cycles_per_update: int = 40
    eval_episodes: int = 50
    seed: int = 0
    hyper: HyperParams = field(default_factory=HyperParams)
    warmup_includes_target: bool = False
    primitive_sigma: float = 0.0
    gripper_pad: float = -1.0
    objective_offset: float = 0.06
    buffer_capacity: int = 10_000
    k_future: int = 4
    curriculum_switch: tuple = (20, 40)
    curriculum_lift: str | None = None
    out_dir: str | None = None
    record_wall_time: bool = True
    save_checkpoints: bool = True
    log_provenance: bool = False

    def __post_init__(self):
        if isinstance(self.hyper, dict):
            self.hyper = HyperParams.from_dict(self.hyper)
        self.curriculum_switch = tuple(int(t) for t in self.curriculum_switch)
        self.primitives = [str(p) for p in self.primitives]
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        for name in ("n_epochs", "episodes_per_epoch", "episodes_per_update", "cycles_per_update",
                     "eval_episodes", "buffer_capacity"):
            if int(getattr(self, name)) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.k_future < 0:
            raise ConfigError("k_future must be >= 0")
        if self.algorithm == "scripted_curriculum" and len(self.primitives) != 1:
            raise ConfigError("scripted_curriculum needs exactly one primitive checkpoint")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path):
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(d)

    def to_dict(self):
        d = asdict(self)
        d["hyper"] = self.hyper.to_dict()
        d["curriculum_switch"] = list(self.curriculum_switch)
        return d

    def resolved_out_dir(self):
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if self.out_dir is None:
            name = f"{self.env}_{self.algorithm}_seed{self.seed}"
            return Path(root or "runs") / name
        out = Path(self.out_dir)
        if root and not out.is_absolute():
            return Path(root) / out
        return out


@dataclass
class MetricsRow:
    epoch: int
    policy_updates: int
    env_steps: int
    eval_success_rate: float
    mean_q: float
    critic_loss: float
    share_target: float
    share_primitive: float
    share_random: float
    wall_time_s: float | None

    def as_csv(self):
        out = []
        for name in METRIC_COLUMNS:
            v = getattr(self, name)
            out.append("" if v is None else repr(float(v)) if isinstance(v, float) else str(v))
        return out


@dataclass
class TrainResult:
    config: RunConfig
    agent: Agent
    metrics: list
    out_dir: Path | None
    actions: list = field(default_factory=list)
    provenance: list = field(default_factory=list)
    primitives: list = field(default_factory=list)

    @property
    def metrics_path(self):
        return None if self.out_dir is None else self.out_dir / "metrics.csv"

    @property
    def checkpoint_path(self):
        return None if self.out_dir is None else self.out_dir / "checkpoint.json"


def resolve_objectives(config):
    if config.objectives is not None:
        return [o if isinstance(o, Objective) else Objective.from_dict(o) for o in config.objectives]
    if config.objective_preset is not None:
        return objective_preset(config.objective_preset, config.objective_offset)
    if config.algorithm == "qmp_her" and config.primitives:
        raise ConfigError("qmp_her with primitives needs objectives or an objective_preset")
    return []


def curriculum_lift_objective(config):
    lift = config.curriculum_lift
    if lift is None:
        lift = "center_elevated" if config.env == "pickthrow_toy" else "above_obstacle"
    if lift == "above_obstacle":
        return Objective("goal_above_obstacle", 0, height=SAFE_HEIGHT, name="above_obstacle")
    if lift == "center_elevated":
        return Objective("goal_override", 0, point=(0.5, 0.5, SAFE_HEIGHT), name="center_elevated")
    raise ConfigError(f"unknown curriculum_lift {lift!r}")


def scripted_curriculum_step(t, obs, primitive, g, agent, rng, lift_objective,
                             switch=(20, 40), epsilon=0.0):
    """Behaviour action of the fixed primitive-then-actor schedule.

    ``t < switch[0]``: primitive toward the lift objective; ``t < switch[1]``:
    primitive toward the episode goal; afterwards the agent's noisy action,
    replaced by a uniform random one with probability ``epsilon``.
    Returns ``(action, provenance)``.
    """
    if t < switch[0]:
        goal = objective_goal(lift_objective, obs, g, primitive.target_spec)
        return primitive.act(obs, goal)[0], (0, 0)
    if t < switch[1]:
        return primitive.act(obs, g)[0], (0, 1)
    a = propose_action(agent, obs, g, "noisy", rng)
    if rng.random() < epsilon:
        return rng.uniform(-1.0, 1.0, size=agent.action_dim), RANDOM
    return a, TARGET


def her_behaviour(agent, obs, g, rng):
    """Noisy target action, replaced by a uniform random one with probability epsilon."""
    a = propose_action(agent, obs, g, "noisy", rng)
    if rng.random() < agent.hyper.epsilon:
        return SelectionRecord(rng.uniform(-1.0, 1.0, size=agent.action_dim), RANDOM, None, True)
    return SelectionRecord(a, TARGET, None, False, 0)


def _policy_fn(policy):
    if isinstance(policy, (str, Path)):
        policy = load_checkpoint(policy)[0]
    if isinstance(policy, Agent):
        snap = policy.snapshot()
        return lambda obs, goals: propose_action(snap, obs, goals, "deterministic")
    if callable(policy):
        return policy
    raise ConfigError(f"cannot evaluate {type(policy).__name__}")


def evaluate(policy, env, episodes, seed):
    """Fraction of episodes whose final step is a success, acting deterministically.

    ``policy`` is an :class:`Agent` (its actor alone), a checkpoint path, or a
    callable ``(obs_batch, goal_batch) -> actions``. Episodes run in lockstep
    so the actor sees one batch per timestep.
    """
    act = _policy_fn(policy)
    name = env if isinstance(env, str) else env.name
    rng = np.random.default_rng(seed)
    envs = [make_env(name) for _ in range(episodes)]
    obs = [e.reset(rng) for e in envs]
    spec = envs[0].spec
    success = np.zeros(episodes, dtype=bool)
    for _ in range(spec.horizon):
        s = np.stack([o.observation for o in obs])
        g = np.stack([o.desired_goal for o in obs])
        actions = np.atleast_2d(act(s, g))
        if actions.shape != (episodes, spec.action_dim):
            raise ConfigError(
                f"policy produced actions of shape {actions.shape}, expected "
                f"{(episodes, spec.action_dim)}")
        for i, e in enumerate(envs):
            res = e.step(actions[i])
            obs[i] = res.observation
            success[i] = res.success
    return float(success.mean())


def _fmt_tag(tag):
    return tag if isinstance(tag, str) else f"p{tag[0]}o{tag[1]}"


class _Run:
    """Mutable state of one training run."""

    def __init__(self, config):
        self.config = config
        self.env = make_env(config.env)
        self.spec = self.env.spec
        seeds = np.random.SeedSequence(config.seed).spawn(5)
        init_rng, self.env_rng, self.explore_rng, buffer_rng = (
            np.random.default_rng(s) for s in seeds[:4])
        self.eval_seq = seeds[4]
        self.agent = Agent.for_spec(self.spec, config.hyper, init_rng)
        self.buffer = ReplayBuffer(self.spec.observation_dim, self.spec.action_dim,
                                   self.spec.goal_dim, self.spec.horizon,
                                   config.buffer_capacity, config.k_future, buffer_rng)
        self.primitives = [load_primitive(p, self.spec, config.gripper_pad)
                           for p in config.primitives]
        self.ensemble = group_by_primitive(self.primitives, resolve_objectives(config)) \
            if config.algorithm == "qmp_her" else []
        self.lift = curriculum_lift_objective(config) \
            if config.algorithm == "scripted_curriculum" else None
        self.warmup_steps = config.hyper.warmup_steps
        if self.warmup_steps is None:
            self.warmup_steps = config.episodes_per_epoch * self.spec.horizon
        self.env_steps = 0
        self.episodes = 0
        self.policy_updates = 0

    def behaviour(self, t, obs, g):
        cfg, agent, rng = self.config, self.agent, self.explore_rng
        if cfg.algorithm == "her":
            return her_behaviour(agent, obs, g, rng)
        if cfg.algorithm == "qmp_her":
            phase = "warmup" if self.env_steps < self.warmup_steps else "normal"
            cands = build_candidate_set(obs, g, self.ensemble, agent, phase, rng,
                                        cfg.warmup_includes_target, cfg.primitive_sigma)
            return q_switch_select(cands, obs, g, agent.q_values, agent.hyper.epsilon, rng,
                                   self.spec.action_dim)
        a, tag = scripted_curriculum_step(t, obs, self.primitives[0], g, agent, rng, self.lift,
                                          cfg.curriculum_switch, agent.hyper.epsilon)
        return SelectionRecord(a, tag, None, tag == RANDOM)

    def collect_episode(self):
        T = self.spec.horizon
        first = self.env.reset(self.env_rng)
        g = first.desired_goal
        obs = np.empty((T + 1, self.spec.observation_dim))
        ag = np.empty((T + 1, self.spec.goal_dim))
        actions = np.empty((T, self.spec.action_dim))
        rewards = np.empty(T)
        obs[0], ag[0] = first.observation, first.achieved_goal
        records = []
        for t in range(T):
            rec = self.behaviour(t, obs[t], g)
            res = self.env.step(rec.action)
            self.env_steps += 1
            actions[t] = rec.action
            obs[t + 1] = res.observation.observation
            ag[t + 1] = res.observation.achieved_goal
            rewards[t] = res.reward
            records.append(rec)
        self.episodes += 1
        episode = Episode(obs, actions, ag, np.repeat(g[None, :], T, axis=0), rewards)
        self.buffer.store_episode(episode)
        update_normalizer(self.agent, episode)
        return episode, records

    def optimize(self):
        cfg, agent = self.config, self.agent
        reward_fn = self.env.compute_reward
        losses, qs = [], []
        for _ in range(cfg.cycles_per_update):
            batch = sample_with_her(self.buffer, agent.hyper.batch_size, reward_fn)
            losses.append(update_critic(batch, agent))
            qs.append(update_actor(batch, agent))
        update_targets(agent)
        self.policy_updates += 1
        return losses, qs


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def train(config, out_dir=None, write=True):
    """Run one configuration end to end; returns a :class:`TrainResult`.

    With ``write`` the run directory receives ``config.json``,
    ``metrics.csv`` (rewritten after every epoch), ``checkpoint.json``
    and, if requested, ``provenance.csv``.
    """
    if isinstance(config, dict):
        config = RunConfig.from_dict(config)
    run = _Run(config)
    out = None
    if write:
        out = Path(out_dir) if out_dir is not None else config.resolved_out_dir()
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True))
    result = TrainResult(config, run.agent, [], out, primitives=run.primitives)
    eval_seeds = run.eval_seq.generate_state(config.n_epochs)
    for epoch in range(config.n_epochs):
        started = time.perf_counter()
        records, losses, qs = [], [], []
        try:
            for m in range(config.episodes_per_epoch):
                episode, recs = run.collect_episode()
                records.extend(recs)
                result.actions.append(episode.actions)
                if config.log_provenance and m == 0:
                    result.provenance.append([_fmt_tag(r.provenance) for r in recs])
                if run.episodes % config.episodes_per_update == 0 \
                        and run.env_steps >= run.warmup_steps:
                    ls, q = run.optimize()
                    losses.extend(ls)
                    qs.extend(q)
        except NumericalDivergenceError as exc:
            exc.epoch = epoch
            log.error("numerical divergence in epoch %d: %s", epoch, exc)
            raise
        success = evaluate(run.agent, run.env.name, config.eval_episodes, int(eval_seeds[epoch]))
        shares = switch_share_metrics(records)
        row = MetricsRow(
            epoch=epoch,
            policy_updates=run.policy_updates,
            env_steps=run.env_steps,
            eval_success_rate=success,
            mean_q=float(np.mean(qs)) if qs else float("nan"),
            critic_loss=float(np.mean(losses)) if losses else float("nan"),
            share_target=shares["target"],
            share_primitive=shares["primitive"],
            share_random=shares["random"],
            wall_time_s=(time.perf_counter() - started) if config.record_wall_time else None,
        )
        result.metrics.append(row)
        log.info("epoch %d updates %d success %.3f target-share %.3f", epoch, run.policy_updates,
                 success, shares["target"])
        if write:
            _write_csv(out / "metrics.csv", METRIC_COLUMNS, [r.as_csv() for r in result.metrics])
            if config.save_checkpoints:
                save_checkpoint(run.agent, out / "checkpoint.json", run.spec)
            if config.log_provenance:
                _write_csv(out / "provenance.csv", ("epoch", "t", "provenance"),
                           [(e, t, tag) for e, tags in enumerate(result.provenance)
                            for t, tag in enumerate(tags)])
    return result


def read_metrics(path):
    """Parse a metrics CSV into column arrays (floats; empty cells become NaN)."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or "policy_updates" not in header or "eval_success_rate" not in header:
            raise ConfigError(f"{path}: not a metrics CSV")
        cols = {h: [] for h in header}
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ConfigError(f"{path}:{lineno}: expected {len(header)} fields")
            for h, v in zip(header, row):
                try:
                    cols[h].append(float(v) if v != "" else float("nan"))
                except ValueError:
                    raise ConfigError(f"{path}:{lineno}: bad value {v!r} in {h}") from None
    return {h: np.array(v) for h, v in cols.items()}


def updates_to_threshold(metrics, threshold=0.8):
    """Policy updates at the first epoch whose eval success reaches ``threshold`` (inf if never)."""
    if isinstance(metrics, dict):
        success, updates = metrics["eval_success_rate"], metrics["policy_updates"]
    else:
        success = np.array([r.eval_success_rate for r in metrics])
        updates = np.array([r.policy_updates for r in metrics])
    hit = np.nonzero(success >= threshold)[0]
    return float(updates[hit[0]]) if hit.size else float("inf")


def learning_curve_area(metrics):
    """Mean eval success over epochs (area under the per-epoch curve, normalized)."""
    if isinstance(metrics, dict):
        return float(np.mean(metrics["eval_success_rate"]))
    return float(np.mean([r.eval_success_rate for r in metrics]))
