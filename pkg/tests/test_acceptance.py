"""Acceptance gate: one test per criterion, each reporting a PASS/FAIL line.

The training-based checks (5-8) use the reduced schedule in ``SCALE``:
10 collection episodes and 20 evaluation episodes per epoch, 64x3 networks
and batch 128. Set ``QMPHER_ACCEPT_DIR`` to keep the run directories.
"""

import os
import time
from pathlib import Path

import numpy as np
import pytest

from qmpher.checkpoint import load_checkpoint, load_primitive, save_checkpoint
from qmpher.envs import make_env
from qmpher.harness import (
    RunConfig,
    evaluate,
    learning_curve_area,
    read_metrics,
    train,
    updates_to_threshold,
)
from qmpher.nn import init_mlp, mlp_backward, mlp_forward
from qmpher.qmp import TARGET, CandidateSet, q_switch_select
from qmpher.replay import Episode, ReplayBuffer, sample_with_her

SCALE = dict(episodes_per_epoch=10, eval_episodes=20, record_wall_time=False,
             hyper={"hidden": [64, 64, 64], "batch_size": 128})
SEEDS = range(5)

REACH_EPOCHS = 30
PUSH_EPOCHS = 200
PICKPLACE_EPOCHS = 800
OBSTACLE_EPOCHS = 250


def config(**kw):
    d = dict(SCALE)
    d.update(kw)
    return RunConfig.from_dict(d)


@pytest.fixture(scope="module")
def run_root(tmp_path_factory):
    root = os.environ.get("QMPHER_ACCEPT_DIR")
    if root:
        Path(root).mkdir(parents=True, exist_ok=True)
        return Path(root)
    return tmp_path_factory.mktemp("acceptance")


def run_once(cfg, out):
    """Train unless a finished run with the same config already sits in ``out``."""
    done = out / "metrics.csv"
    if (out / "checkpoint.json").exists():
        saved = RunConfig.from_file(out / "config.json").to_dict()
        fresh = cfg.to_dict()
        saved.pop("out_dir")
        fresh.pop("out_dir")
        if saved == fresh and len(read_metrics(done)["epoch"]) == cfg.n_epochs:
            return read_metrics(done)
    train(cfg, out_dir=out)
    return read_metrics(done)


# --- 1 ---------------------------------------------------------------------------------

def test_criterion_1_gradient_oracle(report):
    rng = np.random.default_rng(2024)
    h = 1e-6
    worst = 0.0
    start = time.perf_counter()
    for _ in range(100):
        depth = rng.integers(1, 4)
        sizes = [int(rng.integers(1, 13))] + [int(rng.integers(1, 33)) for _ in range(depth)] \
            + [int(rng.integers(1, 5))]
        net = init_mlp(sizes, rng, str(rng.choice(["identity", "tanh"])), output_scale=1.0)
        x = rng.standard_normal(sizes[0])
        up = rng.standard_normal(sizes[-1])
        g = mlp_backward(net, x, up)
        fd = np.empty(net.params.size)
        for i in range(net.params.size):
            keep = net.params[i]
            net.params[i] = keep + h
            fp = up @ mlp_forward(net, x)
            net.params[i] = keep - h
            fm = up @ mlp_forward(net, x)
            net.params[i] = keep
            fd[i] = (fp - fm) / (2 * h)
        denom = max(np.linalg.norm(fd) + np.linalg.norm(g.flat), 1e-12)
        worst = max(worst, np.linalg.norm(fd - g.flat) / denom)
    elapsed = time.perf_counter() - start
    ok = worst < 1e-4 and elapsed < 30
    report(1, ok, f"max rel err {worst:.2e} over 100 nets, {elapsed:.1f}s")
    assert ok


# --- 2 ---------------------------------------------------------------------------------

def test_criterion_2_her_relabel_statistics(report):
    start = time.perf_counter()
    env = make_env("push_toy")
    spec = env.spec
    rng = np.random.default_rng(0)
    buf = ReplayBuffer(spec.observation_dim, spec.action_dim, spec.goal_dim, spec.horizon,
                       200, 4, np.random.default_rng(1))
    for _ in range(60):
        o = env.reset(rng)
        obs, ag, acts = [o.observation], [o.achieved_goal], []
        for _ in range(spec.horizon):
            a = rng.uniform(-1, 1, spec.action_dim)
            o = env.step(a).observation
            acts.append(a)
            obs.append(o.observation)
            ag.append(o.achieved_goal)
        ag = np.array(ag)
        g = np.repeat(o.desired_goal[None], spec.horizon, axis=0)
        buf.store_episode(Episode(np.array(obs), np.array(acts), ag, g,
                                  env.compute_reward(ag[1:], g)))
    b = sample_with_her(buf, 100_000, env.compute_reward)
    ep, t, ft, rel = b.info["episode"], b.info["t"], b.info["future_t"], b.info["relabeled"]
    frac = rel.mean()
    same_later = np.all(ft[rel] >= t[rel]) and np.array_equal(
        b.goals[rel], buf.achieved_goals[ep[rel], ft[rel] + 1])
    kept = np.array_equal(b.goals[~rel], buf.desired_goals[ep[~rel], t[~rel]])
    oracle = np.array([env.compute_reward(a, g) for a, g in zip(b.info["achieved"], b.goals)])
    rewards_ok = np.array_equal(b.rewards, oracle)
    elapsed = time.perf_counter() - start
    ok = 0.79 <= frac <= 0.81 and same_later and kept and rewards_ok and elapsed < 60
    report(2, ok, f"relabeled {frac:.4f}, same-episode/later {same_later}, "
                  f"rewards match {rewards_ok}, {elapsed:.1f}s")
    assert ok


# --- 3 ---------------------------------------------------------------------------------

def _transforms(rng):
    out = []
    for _ in range(10):
        a, b, c, d = rng.uniform(0.1, 3.0, 4)
        out.append(lambda q, a=a, b=b, c=c, d=d: a * q + b * np.tanh(c * q) + d * np.arctan(q) ** 3)
    return out


def test_criterion_3_qswitch_oracle(report):
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    transforms = _transforms(rng)
    matches = invariant = ties = 0
    for trial in range(1000):
        n = int(rng.integers(1, 16))
        q = rng.integers(-5, 5, n) * 0.5 if trial % 2 else rng.standard_normal(n)
        ties += len(np.unique(q)) < n
        cs = CandidateSet(rng.uniform(-1, 1, (n, 4)), [(0, i) for i in range(n - 1)] + [TARGET])
        best = 0
        for i in range(1, n):  # linear scan, first maximum wins
            if q[i] > q[best]:
                best = i
        rec = q_switch_select(cs, None, None, lambda o, g, a, q=q: q, 0.0, rng)
        matches += rec.index == best and np.array_equal(rec.action, cs.actions[best])
        picks = {q_switch_select(cs, None, None, lambda o, g, a, f=f, q=q: f(q), 0.0, rng).index
                 for f in transforms}
        invariant += picks == {best}
    elapsed = time.perf_counter() - start
    ok = matches == 1000 and invariant == 1000 and elapsed < 10
    report(3, ok, f"argmax match {matches}/1000 ({ties} with ties), "
                  f"transform-invariant {invariant}/1000, {elapsed:.1f}s")
    assert ok


# --- 4 ---------------------------------------------------------------------------------

def test_criterion_4_reduction_identity(report):
    her = train(config(env="reach_toy", algorithm="her", n_epochs=2, seed=11), write=False)
    qmp = train(config(env="reach_toy", algorithm="qmp_her", n_epochs=2, seed=11), write=False)
    same = len(her.actions) == len(qmp.actions) and all(
        a.tobytes() == b.tobytes() for a, b in zip(her.actions, qmp.actions))
    steps = sum(len(a) for a in her.actions)
    report(4, same, f"{len(her.actions)} episodes / {steps} executed actions byte-equal: {same}")
    assert same


# --- 5 ---------------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_5_reach_learning_sanity(report, run_root):
    start = time.perf_counter()
    best = []
    for s in SEEDS:
        cfg = config(env="reach_toy", algorithm="her", n_epochs=REACH_EPOCHS, seed=s)
        m = run_once(cfg, run_root / f"reach_her_seed{s}")
        best.append(float(np.max(m["eval_success_rate"])))
    elapsed = time.perf_counter() - start
    med = float(np.median(best))
    ok = med >= 0.9 and elapsed < 15 * 60
    report(5, ok, f"best success per seed {best}, median {med:.2f}, {elapsed / 60:.1f} min")
    assert ok


# --- shared primitives and runs ----------------------------------------------------------

@pytest.fixture(scope="module")
def reach_primitive(run_root):
    # same run as criterion 5 seed 0; cached if that test already ran
    out = run_root / "reach_her_seed0"
    run_once(config(env="reach_toy", algorithm="her", n_epochs=REACH_EPOCHS, seed=0), out)
    return str(out / "checkpoint.json")


@pytest.fixture(scope="module")
def push_runs(run_root, reach_primitive):
    start = time.perf_counter()
    runs = {"her": [], "qmp_her": []}
    for algo in runs:
        for s in SEEDS:
            extra = {} if algo == "her" else dict(primitives=[reach_primitive],
                                                   objective_preset="push")
            cfg = config(env="push_toy", algorithm=algo, n_epochs=PUSH_EPOCHS, seed=s, **extra)
            runs[algo].append(run_once(cfg, run_root / f"push_{algo}_seed{s}"))
    return runs, time.perf_counter() - start


@pytest.mark.slow
def test_criterion_6_sample_efficiency_ordering(report, push_runs):
    runs, elapsed = push_runs
    upd = {a: [updates_to_threshold(m, 0.8) for m in ms] for a, ms in runs.items()}
    auc = {a: [learning_curve_area(m) for m in ms] for a, ms in runs.items()}
    med_upd = {a: float(np.median(v)) for a, v in upd.items()}
    med_auc = {a: float(np.median(v)) for a, v in auc.items()}
    ok = med_upd["qmp_her"] < med_upd["her"] and med_auc["qmp_her"] > med_auc["her"] \
        and elapsed < 2 * 3600
    report(6, ok, f"median updates to 80%: qmp_her {med_upd['qmp_her']} vs her {med_upd['her']}; "
                  f"median AUC {med_auc['qmp_her']:.3f} vs {med_auc['her']:.3f}; "
                  f"{elapsed / 60:.1f} min")
    assert ok


@pytest.mark.slow
def test_criterion_7_behaviour_convergence(report, push_runs):
    runs, _ = push_runs
    lines, ok, n_success = [], True, 0
    for s, m in zip(SEEDS, runs["qmp_her"]):
        if not np.isfinite(updates_to_threshold(m, 0.8)):
            continue
        n_success += 1
        # row 0 is the warm-up epoch, where the target is never a candidate
        warm, first, last = m["share_target"][0], m["share_target"][1], m["share_target"][-1]
        ok &= last > first
        lines.append(f"seed{s} {first:.3f}->{last:.3f} (warm-up {warm:.3f})")
    ok &= n_success > 0
    report(7, ok, f"share_target epoch 1 -> final on {n_success} successful runs: "
                  + ", ".join(lines))
    assert ok


# --- 8 ---------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def pickplace_primitive(run_root, reach_primitive):
    out = run_root / "pickplace_primitive"
    cfg = config(env="pickplace_toy", algorithm="qmp_her", n_epochs=PICKPLACE_EPOCHS, seed=0,
                 primitives=[reach_primitive], objective_preset="pickplace",
                 warmup_includes_target=True)
    run_once(cfg, out)
    return str(out / "checkpoint.json")


@pytest.mark.slow
def test_criterion_8_scripted_curriculum(report, run_root, pickplace_primitive):
    start = time.perf_counter()
    logged = train(config(env="pickobstacle_toy", algorithm="scripted_curriculum", n_epochs=1,
                          primitives=[pickplace_primitive], log_provenance=True, seed=0,
                          hyper=dict(SCALE["hyper"], epsilon=0.0)), write=False)
    tags = logged.provenance[0]
    phases_ok = set(tags[:20]) == {"p0o0"} and set(tags[20:40]) == {"p0o1"} \
        and set(tags[40:]) == {"target"}
    runs = {"scripted_curriculum": [], "qmp_her": []}
    for algo in runs:
        for s in SEEDS:
            extra = {} if algo == "scripted_curriculum" else dict(objective_preset="pickobstacle")
            cfg = config(env="pickobstacle_toy", algorithm=algo, n_epochs=OBSTACLE_EPOCHS, seed=s,
                         primitives=[pickplace_primitive], **extra)
            runs[algo].append(run_once(cfg, run_root / f"pickobstacle_{algo}_seed{s}"))
    med = {a: float(np.median([updates_to_threshold(m, 0.8) for m in ms])) for a, ms in runs.items()}
    ok = phases_ok and med["qmp_her"] < med["scripted_curriculum"]
    report(8, ok, f"phase tags at t=20/40 ok {phases_ok}; median updates to 80%: "
                  f"qmp_her {med['qmp_her']} vs scripted {med['scripted_curriculum']}; "
                  f"{(time.perf_counter() - start) / 60:.1f} min")
    assert ok


# --- 9 ---------------------------------------------------------------------------------

def test_criterion_9_determinism_and_persistence(report, tmp_path):
    cfg = config(env="push_toy", algorithm="her", n_epochs=2, seed=5)
    a = train(cfg, out_dir=tmp_path / "a")
    train(cfg, out_dir=tmp_path / "b")
    csv_same = (tmp_path / "a/metrics.csv").read_bytes() == (tmp_path / "b/metrics.csv").read_bytes()
    loaded, spec, _ = load_checkpoint(tmp_path / "a/checkpoint.json")
    again = save_checkpoint(loaded, tmp_path / "again.json", spec)
    ckpt_same = again.read_bytes() == (tmp_path / "a/checkpoint.json").read_bytes()
    reach = train(config(env="reach_toy", algorithm="her", n_epochs=1, seed=5),
                  out_dir=tmp_path / "reach")
    prim = load_primitive(reach.out_dir / "checkpoint.json", make_env("push_toy").spec)
    o = make_env("push_toy").reset(np.random.default_rng(0))
    act = prim.act(o.observation, o.desired_goal)
    projected = act.shape == (1, 3) and np.all(np.abs(act) <= 1)
    ok = csv_same and ckpt_same and projected and a.agent is not None
    report(9, ok, f"CSV byte-identical {csv_same}; checkpoint round trip {ckpt_same}; "
                  f"reach->push load {projected}; eval of reach ckpt "
                  f"{evaluate(reach.out_dir / 'checkpoint.json', 'reach_toy', 5, 0):.2f}")
    assert ok
