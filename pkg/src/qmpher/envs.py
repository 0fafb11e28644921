"""Kinematic goal-conditioned manipulation toys.

Five desk-scale tasks share one gripper model: a point gripper moved by
velocity commands, an optional pair of fingers, and an optional block that
can be pushed (closed fingers, overlap resolution in the table plane) or
carried (attachment when closing open fingers near it). There is no
physics; every transition is a deterministic function of state and action.

Units are "workspace units"; the table top is the plane ``z = TABLE_Z``
and a block resting on it has its position at that height.

Observation layouts (blocks in order):

=================  ======================================================
reach_toy          grip_pos(3) grip_velp(3)                          -> 6
push_toy           grip_pos(3) grip_velp(3) object(9)                -> 15
pickplace_toy      grip_pos(3) grip_velp(3) gripper(2) object(9)     -> 17
pickobstacle_toy   same as pickplace_toy                             -> 17
pickthrow_toy      same as pickplace_toy                             -> 17
=================  ======================================================

``object`` is obj_pos(3), obj_pos - grip_pos(3), obj_velp(3). Velocities
are per-step displacements divided by ``MAX_DISPLACEMENT``.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, EpisodeFinishedError

TABLE_Z = 0.1
MAX_DISPLACEMENT = 0.05
DISTANCE_THRESHOLD = 0.05
XY_LOW, XY_HIGH = 0.2, 0.8
Z_LOW, Z_HIGH = TABLE_Z, TABLE_Z + 0.3

GRIPPER_RADIUS = 0.015
OBJECT_RADIUS = 0.025
CONTACT_DIST = GRIPPER_RADIUS + OBJECT_RADIUS
CONTACT_HEIGHT = 0.04
GRASP_RADIUS = 0.03
FINGER_MAX = 0.08
OPEN_WIDTH = 0.05
FINGER_SPEED = 0.04
N_SUBSTEPS = 5

OBSTACLE_LOW = np.array([0.47, XY_LOW, TABLE_Z])
OBSTACLE_HIGH = np.array([0.53, XY_HIGH, TABLE_Z + 0.1])
SAFE_HEIGHT = TABLE_Z + 0.15

THROW_GAIN = 6.0
BUCKET_ROWS_X = (0.95, 1.1)
BUCKET_COLS_Y = (0.35, 0.45, 0.55, 0.65)
BUCKET_HALF = 0.05
BUCKET_HALF_X = 0.075

PROPRIO_BLOCKS = (("grip_pos", 3), ("grip_velp", 3))
GRIPPER_BLOCK = (("gripper", 2),)
OBJECT_BLOCK = (("object", 9),)


@dataclass(frozen=True)
class EnvSpec:
    name: str
    observation_dim: int
    action_dim: int
    goal_dim: int
    horizon: int
    has_object: bool
    has_gripper: bool
    goal_space_kind: str
    layout: tuple = field(default=(), compare=True)

    def __post_init__(self):
        if min(self.observation_dim, self.action_dim, self.goal_dim, self.horizon) <= 0:
            raise ContractError(f"{self.name}: dimensions must be positive")
        if sum(n for _, n in self.layout) != self.observation_dim:
            raise ContractError(f"{self.name}: layout does not add up to observation_dim")
        if self.goal_space_kind not in ("continuous", "discrete"):
            raise ContractError(f"unknown goal space kind {self.goal_space_kind!r}")

    def block_slices(self):
        out, offset = {}, 0
        for name, size in self.layout:
            out[name] = slice(offset, offset + size)
            offset += size
        return out

    def to_dict(self):
        return {
            "name": self.name,
            "observation_dim": self.observation_dim,
            "action_dim": self.action_dim,
            "goal_dim": self.goal_dim,
            "horizon": self.horizon,
            "has_object": self.has_object,
            "has_gripper": self.has_gripper,
            "goal_space_kind": self.goal_space_kind,
            "layout": [[n, s] for n, s in self.layout],
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["layout"] = tuple((str(n), int(s)) for n, s in d["layout"])
        return cls(**d)


@dataclass
class GoalObservation:
    observation: np.ndarray
    achieved_goal: np.ndarray
    desired_goal: np.ndarray

    def __post_init__(self):
        if np.shape(self.achieved_goal) != np.shape(self.desired_goal):
            raise ContractError("achieved_goal and desired_goal lengths differ")


@dataclass
class StepResult:
    observation: GoalObservation
    reward: float
    success: bool


def bucket_centers():
    return np.array([[x, y, TABLE_Z] for x in BUCKET_ROWS_X for y in BUCKET_COLS_Y])


def bucket_index(points):
    """Bucket region of each point, or -1 when outside every bucket."""
    p = np.asarray(points, dtype=np.float64)
    x, y = p[..., 0], p[..., 1]
    x0 = BUCKET_ROWS_X[0] - BUCKET_HALF_X
    y0 = BUCKET_COLS_Y[0] - BUCKET_HALF
    row = np.floor((x - x0) / (2 * BUCKET_HALF_X)).astype(int)
    col = np.floor((y - y0) / (2 * BUCKET_HALF)).astype(int)
    inside = (row >= 0) & (row < len(BUCKET_ROWS_X)) & (col >= 0) & (col < len(BUCKET_COLS_Y))
    return np.where(inside, row * len(BUCKET_COLS_Y) + col, -1)


class ToyEnv:
    """Shared gripper/block kinematics; subclasses choose layout and sampling."""

    name = "toy"
    horizon = 50
    has_object = True
    has_gripper = False
    has_obstacle = False
    throws = False
    goal_space_kind = "continuous"

    def __init__(self, distance_threshold=DISTANCE_THRESHOLD):
        self.distance_threshold = distance_threshold
        layout = PROPRIO_BLOCKS
        if self.has_gripper:
            layout += GRIPPER_BLOCK
        if self.has_object:
            layout += OBJECT_BLOCK
        self.spec = EnvSpec(
            name=self.name,
            observation_dim=sum(n for _, n in layout),
            action_dim=4 if self.has_gripper else 3,
            goal_dim=3,
            horizon=self.horizon,
            has_object=self.has_object,
            has_gripper=self.has_gripper,
            goal_space_kind=self.goal_space_kind,
            layout=layout,
        )
        self.rng = np.random.default_rng()
        self.grip = np.zeros(3)
        self.grip_vel = np.zeros(3)
        self.width = 0.0
        self.obj = np.zeros(3)
        self.obj_vel = np.zeros(3)
        self.holding = False
        self.thrown = False
        self.goal = np.zeros(3)
        self.t = 0

    # --- sampling, overridden per task -------------------------------------------------
    def _sample_initial(self, rng):
        raise NotImplementedError

    def _sample_goal(self, rng):
        raise NotImplementedError

    # --- public interface --------------------------------------------------------------
    def reset(self, rng=None):
        if rng is None:
            rng = self.rng
        elif not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        self.rng = rng
        self.grip_vel = np.zeros(3)
        self.obj_vel = np.zeros(3)
        self.holding = False
        self.thrown = False
        self.width = 0.0
        self.t = 0
        self._sample_initial(rng)
        self.goal = self._sample_goal(rng)
        return self.observe()

    def achieved_goal(self):
        return (self.obj if self.has_object else self.grip).copy()

    def observe(self):
        parts = [self.grip, self.grip_vel]
        if self.has_gripper:
            parts.append([self.width / 2, self.width / 2])
        if self.has_object:
            parts += [self.obj, self.obj - self.grip, self.obj_vel]
        return GoalObservation(np.concatenate(parts), self.achieved_goal(), self.goal.copy())

    def get_state(self):
        return {
            "grip": self.grip.copy(), "grip_vel": self.grip_vel.copy(), "width": self.width,
            "obj": self.obj.copy(), "obj_vel": self.obj_vel.copy(), "holding": self.holding,
            "thrown": self.thrown, "goal": self.goal.copy(), "t": self.t,
        }

    def set_state(self, state):
        for key, value in state.items():
            setattr(self, key, value.copy() if isinstance(value, np.ndarray) else value)
        return self.observe()

    def compute_reward(self, achieved, desired, info=None):
        """0 on success, -1 otherwise; works on single goals or batches."""
        achieved = np.asarray(achieved, dtype=np.float64)
        desired = np.asarray(desired, dtype=np.float64)
        if achieved.shape != desired.shape:
            raise ContractError(f"goal shapes differ: {achieved.shape} vs {desired.shape}")
        d = np.linalg.norm(achieved - desired, axis=-1)
        r = np.where(d < self.distance_threshold, 0.0, -1.0)
        return float(r) if r.ndim == 0 else r

    def step(self, action):
        if self.t >= self.horizon:
            raise EpisodeFinishedError(f"{self.name}: episode already reached horizon {self.horizon}")
        a = np.asarray(action, dtype=np.float64).ravel()
        if a.size != self.spec.action_dim:
            raise ContractError(
                f"action length mismatch: expected {self.spec.action_dim}, got {a.size}")
        if not np.isfinite(a).all():
            raise ContractError("action contains non-finite components")
        a = np.clip(a, -1.0, 1.0)
        old_grip, old_obj = self.grip.copy(), self.obj.copy()
        if self.has_gripper:
            self._actuate_fingers(a[3])
        delta = MAX_DISPLACEMENT * a[:3] / N_SUBSTEPS
        for _ in range(N_SUBSTEPS):
            for axis in range(3):
                if delta[axis] != 0.0:
                    self._move_axis(axis, delta[axis])
        self.grip_vel = (self.grip - old_grip) / MAX_DISPLACEMENT
        self.obj_vel = (self.obj - old_obj) / MAX_DISPLACEMENT
        self.t += 1
        obs = self.observe()
        reward = self.compute_reward(obs.achieved_goal, obs.desired_goal)
        return StepResult(obs, reward, reward == 0.0)

    # --- kinematics --------------------------------------------------------------------
    def _in_obstacle(self, p, margin):
        if not self.has_obstacle:
            return False
        return bool(np.all(p > OBSTACLE_LOW - margin) and np.all(p < OBSTACLE_HIGH + margin))

    def _rest_height(self, xy):
        if self.has_obstacle and np.all(xy > OBSTACLE_LOW[:2] - OBJECT_RADIUS) \
                and np.all(xy < OBSTACLE_HIGH[:2] + OBJECT_RADIUS):
            return OBSTACLE_HIGH[2]
        return TABLE_Z

    def _actuate_fingers(self, command):
        if self.holding:
            if command > 0.0:
                self.holding = False
                self.width = min(FINGER_MAX, self.width + FINGER_SPEED * command)
                self._release()
            return
        near = self.has_object and not self.thrown \
            and np.linalg.norm(self.grip - self.obj) < GRASP_RADIUS
        if command < 0.0 and self.width >= OPEN_WIDTH and near:
            self.holding = True
            self.width = OPEN_WIDTH
            self.obj = self.grip.copy()
            return
        self.width = float(np.clip(self.width + FINGER_SPEED * command, 0.0, FINGER_MAX))

    def _release(self):
        if self.throws:
            landing = self.obj[:2] + THROW_GAIN * MAX_DISPLACEMENT * self.grip_vel[:2]
            if landing[0] > XY_HIGH + OBJECT_RADIUS:
                region = int(bucket_index(np.array([landing[0], landing[1], TABLE_Z])))
                if region >= 0:
                    landing = bucket_centers()[region][:2]
                self.obj = np.array([landing[0], landing[1], TABLE_Z])
                self.thrown = True
                return
            landing = np.clip(landing, XY_LOW, XY_HIGH)
            self.obj = np.array([landing[0], landing[1], TABLE_Z])
            return
        self.obj = np.array([self.obj[0], self.obj[1], self._rest_height(self.obj[:2])])

    def _move_axis(self, axis, d):
        cand = self.grip.copy()
        lo = (XY_LOW, XY_LOW, Z_LOW)[axis]
        hi = (XY_HIGH, XY_HIGH, Z_HIGH)[axis]
        cand[axis] = min(hi, max(lo, cand[axis] + d))
        if cand[axis] == self.grip[axis]:
            return
        if self.holding:
            if self._in_obstacle(cand, OBJECT_RADIUS):
                return
            self.grip = cand
            self.obj = cand.copy()
            return
        if self._in_obstacle(cand, GRIPPER_RADIUS):
            return
        if self.has_object and not self.thrown and self.width < OPEN_WIDTH:
            cand = self._resolve_contact(cand, axis, d)
            if cand is None:
                return
        self.grip = cand

    def _resolve_contact(self, cand, axis, d):
        """Push the block out of the gripper's way; None if the move is blocked."""
        top = self.obj[2] + CONTACT_HEIGHT
        if cand[2] >= top:
            return cand
        rel = self.obj[:2] - cand[:2]
        dist = float(np.hypot(rel[0], rel[1]))
        if dist >= CONTACT_DIST:
            return cand
        if axis == 2 and self.grip[2] >= top:
            # coming down onto the block: rest on its top face
            cand[2] = top
            return cand
        if dist < 1e-12:
            direction = np.zeros(2)
            direction[axis if axis < 2 else 0] = np.sign(d) or 1.0
        else:
            direction = rel / dist
        new_xy = cand[:2] + direction * CONTACT_DIST
        if np.any(new_xy < XY_LOW) or np.any(new_xy > XY_HIGH):
            return None
        new_obj = np.array([new_xy[0], new_xy[1], self.obj[2]])
        if self._in_obstacle(new_obj, OBJECT_RADIUS):
            return None
        self.obj = new_obj
        return cand


def _uniform_xy_away(rng, center, radius, min_dist):
    while True:
        xy = center + rng.uniform(-radius, radius, size=2)
        if np.linalg.norm(xy - center) >= min_dist:
            return xy


class ReachToy(ToyEnv):
    name = "reach_toy"
    horizon = 25
    has_object = False

    def _sample_initial(self, rng):
        self.grip = np.array([*rng.uniform(0.3, 0.7, size=2),
                              rng.uniform(TABLE_Z + 0.05, TABLE_Z + 0.2)])
        self.obj = np.zeros(3)

    def _sample_goal(self, rng):
        return np.array([*rng.uniform(0.25, 0.75, size=2), rng.uniform(TABLE_Z, TABLE_Z + 0.2)])


class PushToy(ToyEnv):
    name = "push_toy"
    horizon = 50

    def _sample_initial(self, rng):
        self.grip = np.array([0.5, 0.5, TABLE_Z + 0.02])
        xy = _uniform_xy_away(rng, self.grip[:2], 0.15, 0.08)
        self.obj = np.array([xy[0], xy[1], TABLE_Z])

    def _sample_goal(self, rng):
        xy = self.grip[:2] + rng.uniform(-0.15, 0.15, size=2)
        return np.array([xy[0], xy[1], TABLE_Z])


class PickPlaceToy(PushToy):
    name = "pickplace_toy"
    has_gripper = True

    def _sample_initial(self, rng):
        self.grip = np.array([0.5, 0.5, TABLE_Z + 0.1])
        self.width = 0.04
        xy = _uniform_xy_away(rng, self.grip[:2], 0.15, 0.05)
        self.obj = np.array([xy[0], xy[1], TABLE_Z])

    def _sample_goal(self, rng):
        xy = self.grip[:2] + rng.uniform(-0.15, 0.15, size=2)
        z = TABLE_Z
        if rng.uniform() < 0.5:
            z += rng.uniform(0.0, 0.2)
        return np.array([xy[0], xy[1], z])


class PickObstacleToy(ToyEnv):
    """A wall across the table separates the block from its goal."""

    name = "pickobstacle_toy"
    has_gripper = True
    has_obstacle = True

    def _sample_initial(self, rng):
        self.grip = np.array([0.36, 0.5, TABLE_Z + 0.1])
        self.width = 0.04
        self.obj = np.array([rng.uniform(0.3, 0.42), rng.uniform(0.35, 0.65), TABLE_Z])

    def _sample_goal(self, rng):
        return np.array([rng.uniform(0.58, 0.7), rng.uniform(0.35, 0.65), TABLE_Z])


class PickThrowToy(PickPlaceToy):
    """Goals are eight bucket regions beyond the reachable workspace."""

    name = "pickthrow_toy"
    throws = True
    goal_space_kind = "discrete"

    def _sample_goal(self, rng):
        return bucket_centers()[rng.integers(8)].copy()

    def compute_reward(self, achieved, desired, info=None):
        achieved = np.asarray(achieved, dtype=np.float64)
        desired = np.asarray(desired, dtype=np.float64)
        if achieved.shape != desired.shape:
            raise ContractError(f"goal shapes differ: {achieved.shape} vs {desired.shape}")
        r = np.where(bucket_index(achieved) == bucket_index(desired), 0.0, -1.0)
        return float(r) if r.ndim == 0 else r


ENVS = {cls.name: cls for cls in (ReachToy, PushToy, PickPlaceToy, PickObstacleToy, PickThrowToy)}


def make_env(name, **kwargs):
    try:
        return ENVS[name](**kwargs)
    except KeyError:
        raise ConfigError(f"unknown environment {name!r}; choose from {sorted(ENVS)}") from None


def reset(env, rng=None):
    return env.reset(rng)


def step(env, action):
    return env.step(action)


def compute_reward(achieved, desired, env):
    return env.compute_reward(achieved, desired)


def project_for_primitive(obs, source_spec, target_spec):
    """Keep only the observation blocks a primitive trained on ``target_spec`` knows.

    Goals are passed through unchanged; objectives replace them afterwards.
    """
    src = source_spec.block_slices()
    x = np.asarray(obs.observation)
    if x.shape[-1] != source_spec.observation_dim:
        raise ContractError(
            f"observation length {x.shape[-1]} does not match {source_spec.name} "
            f"({source_spec.observation_dim})")
    parts = []
    for name, size in target_spec.layout:
        if name not in src or src[name].stop - src[name].start != size:
            raise ContractError(
                f"cannot project {source_spec.name} onto {target_spec.name}: "
                f"block {name!r} missing or resized")
        parts.append(x[..., src[name]])
    return GoalObservation(np.concatenate(parts, axis=-1), obs.achieved_goal, obs.desired_goal)


def projection_indices(source_spec, target_spec):
    """Column indices that :func:`project_for_primitive` selects."""
    src = source_spec.block_slices()
    idx = []
    for name, size in target_spec.layout:
        if name not in src or src[name].stop - src[name].start != size:
            raise ContractError(
                f"cannot project {source_spec.name} onto {target_spec.name}: "
                f"block {name!r} missing or resized")
        idx.extend(range(src[name].start, src[name].stop))
    return np.array(idx, dtype=int)
