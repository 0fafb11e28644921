import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qmpher.envs import make_env
from qmpher.errors import ContractError
from qmpher.replay import Episode, ReplayBuffer, recompute_reward, sample_with_her

T = 5


def random_episode(rng, obs_dim=4, act_dim=2, goal_dim=3, horizon=T, tag=None):
    ag = rng.uniform(0, 1, (horizon + 1, goal_dim))
    if tag is not None:
        ag[:, 0] = tag  # lets tests recover the source episode
    g = np.repeat(rng.uniform(0, 1, (1, goal_dim)), horizon, axis=0)
    return Episode(rng.standard_normal((horizon + 1, obs_dim)),
                   rng.uniform(-1, 1, (horizon, act_dim)), ag, g,
                   -np.ones(horizon))


def make_buffer(capacity=10, k=4, seed=0, horizon=T):
    return ReplayBuffer(4, 2, 3, horizon, capacity, k, np.random.default_rng(seed))


def test_store_into_empty():
    buf = make_buffer()
    buf.store_episode(random_episode(np.random.default_rng(0)))
    assert len(buf) == 1


def test_fifo_eviction():
    rng = np.random.default_rng(0)
    buf = make_buffer(capacity=3)
    eps = [random_episode(rng) for _ in range(4)]
    for e in eps:
        buf.store_episode(e)
    assert len(buf) == 3 and buf.n_stored == 4
    held = [buf.episode(i).obs for i in range(3)]
    assert not any(np.array_equal(h, eps[0].obs) for h in held)
    for h, e in zip(held, eps[1:]):
        np.testing.assert_array_equal(h, e.obs)


def test_roundtrip_arrays():
    rng = np.random.default_rng(1)
    buf = make_buffer()
    e = random_episode(rng)
    buf.store_episode(e)
    back = buf.episode(0)
    for name in ("obs", "actions", "achieved_goals", "desired_goals", "rewards"):
        np.testing.assert_array_equal(getattr(back, name), getattr(e, name))


def test_shape_errors():
    rng = np.random.default_rng(0)
    buf = make_buffer()
    with pytest.raises(ContractError):
        buf.store_episode(random_episode(rng, horizon=T + 1))
    with pytest.raises(ContractError, match="obs"):
        buf.store_episode(random_episode(rng, obs_dim=5))
    with pytest.raises(ContractError):
        make_buffer().sample(4, make_env("push_toy").compute_reward)


def test_memory_bound():
    buf = make_buffer(capacity=7)
    assert buf.stored_floats() <= 7 * (T + 1) * (4 + 2 + 3 + 3 + 1)


def test_no_relabel_when_k_zero():
    rng = np.random.default_rng(2)
    buf = make_buffer(k=0)
    for _ in range(5):
        buf.store_episode(random_episode(rng))
    b = buf.sample(500, make_env("push_toy").compute_reward)
    assert not b.info["relabeled"].any()
    np.testing.assert_array_equal(b.rewards, buf.rewards[b.info["episode"], b.info["t"]])
    np.testing.assert_array_equal(b.goals, buf.desired_goals[b.info["episode"], b.info["t"]])


def test_relabel_to_own_achieved_goal_is_success():
    rng = np.random.default_rng(3)
    buf = make_buffer()
    buf.store_episode(random_episode(rng))
    b = buf.sample(2000, make_env("push_toy").compute_reward)
    own = b.info["relabeled"] & (b.info["future_t"] == b.info["t"])
    assert own.sum() > 50
    assert np.all(b.rewards[own] == 0.0)


def test_sample_reproducible():
    rng = np.random.default_rng(4)
    eps = [random_episode(rng) for _ in range(6)]
    out = []
    for _ in range(2):
        buf = make_buffer(seed=11)
        for e in eps:
            buf.store_episode(e)
        b = buf.sample(64, make_env("push_toy").compute_reward)
        out.append((b.obs.tobytes(), b.goals.tobytes(), b.rewards.tobytes()))
    assert out[0] == out[1]


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(0, 8), st.integers(1, 12))
def test_future_goals_come_from_same_episode_later(seed, k, n_eps):
    rng = np.random.default_rng(seed)
    buf = make_buffer(capacity=8, k=k, seed=seed)
    for i in range(n_eps):
        buf.store_episode(random_episode(rng, tag=1000.0 + i))
    env = make_env("push_toy")
    b = sample_with_her(buf, 256, env.compute_reward)
    ep, t, ft, rel = b.info["episode"], b.info["t"], b.info["future_t"], b.info["relabeled"]
    assert np.all(ft[rel] >= t[rel]) and np.all(ft[rel] <= T - 1)
    assert np.all(ft[~rel] == -1)
    np.testing.assert_array_equal(b.goals[rel], buf.achieved_goals[ep[rel], ft[rel] + 1])
    # tag column identifies the episode the goal was drawn from
    np.testing.assert_array_equal(b.goals[rel, 0], buf.achieved_goals[ep[rel], 0, 0])
    np.testing.assert_array_equal(b.rewards, env.compute_reward(b.info["achieved"], b.goals))
    np.testing.assert_array_equal(b.info["achieved"], buf.achieved_goals[ep, t + 1])


def test_recompute_reward_delegates():
    env = make_env("pickplace_toy")
    rng = np.random.default_rng(0)
    a = rng.uniform(0.4, 0.6, (1000, 3))
    g = rng.uniform(0.4, 0.6, (1000, 3))
    np.testing.assert_array_equal(recompute_reward(a, g, env.compute_reward),
                                  env.compute_reward(a, g))
    assert recompute_reward(a[0], a[0], env.compute_reward) == 0.0
    assert recompute_reward(a[0], a[0] + [0.2, 0, 0], env.compute_reward) == -1.0
