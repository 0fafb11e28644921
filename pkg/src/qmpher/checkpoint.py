"""Policy checkpoints.

A checkpoint is two lines of canonical JSON (sorted keys, no whitespace):
a header with the format version, env spec, network shapes and the
SHA-256 of the body; then the body with flat row-major parameter arrays
and normalizer moments. Floats are written with ``repr`` precision, so
save -> load -> save reproduces the file byte for byte.
"""

import hashlib
import json
from pathlib import Path

import numpy as np

from .ddpg import Agent, HyperParams, Normalizer
from .envs import EnvSpec, projection_indices
from .errors import (
    CheckpointCorruptError,
    CheckpointDimensionError,
    CheckpointVersionError,
    ContractError,
    NumericalDivergenceError,
)
from .nn import Mlp
from .qmp import Primitive

FORMAT = "qmpher-checkpoint"
VERSION = 1


def _dumps(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _net_header(net):
    return {"layer_sizes": list(net.layer_sizes), "hidden_activation": net.hidden_activation,
            "output_activation": net.output_activation, "n_params": int(net.params.size)}


def checkpoint_bytes(agent, env_spec):
    for label, net in (("actor", agent.actor), ("critic", agent.critic)):
        if not np.isfinite(net.params).all():
            raise NumericalDivergenceError(f"refusing to save non-finite {label} parameters")
    body = _dumps({
        "actor": agent.actor.params.tolist(),
        "critic": agent.critic.params.tolist(),
        "obs_norm": agent.obs_norm.state_dict(),
        "goal_norm": agent.goal_norm.state_dict(),
    })
    header = _dumps({
        "format": FORMAT,
        "version": VERSION,
        "env_spec": env_spec.to_dict(),
        "actor": _net_header(agent.actor),
        "critic": _net_header(agent.critic),
        "normalizer": {"obs_dim": agent.obs_norm.size, "goal_dim": agent.goal_norm.size,
                       "eps": agent.obs_norm.eps, "clip": agent.obs_norm.clip},
        "body_sha256": hashlib.sha256(body.encode()).hexdigest(),
    })
    return (header + "\n" + body + "\n").encode()


def save_checkpoint(agent, path, env_spec):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = checkpoint_bytes(agent, env_spec)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)
    return path


def read_header(path):
    raw = Path(path).read_bytes()
    first, _, _ = raw.partition(b"\n")
    try:
        header = json.loads(first)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointCorruptError(f"{path}: unreadable header ({exc})") from None
    if not isinstance(header, dict) or header.get("format") != FORMAT:
        raise CheckpointCorruptError(f"{path}: not a {FORMAT} file")
    if header.get("version") != VERSION:
        raise CheckpointVersionError(
            f"{path}: checkpoint version {header.get('version')} (expected {VERSION})")
    return header


def _net_from(header, params):
    params = np.asarray(params, dtype=np.float64)
    if params.size != header["n_params"]:
        raise CheckpointCorruptError("parameter count does not match header")
    try:
        return Mlp(header["layer_sizes"], params, header["output_activation"],
                   header["hidden_activation"])
    except ContractError as exc:
        raise CheckpointCorruptError(str(exc)) from None


def load_checkpoint(path):
    """Parse and verify a checkpoint; returns ``(agent, env_spec, header)``.

    The returned agent has fresh optimizers and targets equal to the online nets.
    """
    path = Path(path)
    header = read_header(path)
    raw = path.read_bytes()
    parts = raw.split(b"\n")
    if len(parts) != 3 or parts[2] != b"":
        raise CheckpointCorruptError(f"{path}: expected a header line and a body line")
    body_raw = parts[1]
    if hashlib.sha256(body_raw).hexdigest() != header.get("body_sha256"):
        raise CheckpointCorruptError(f"{path}: body checksum mismatch (truncated or edited)")
    try:
        body = json.loads(body_raw)
        spec = EnvSpec.from_dict(header["env_spec"])
        norm = header["normalizer"]
        actor = _net_from(header["actor"], body["actor"])
        critic = _net_from(header["critic"], body["critic"])
    except (json.JSONDecodeError, KeyError, TypeError, ContractError) as exc:
        raise CheckpointCorruptError(f"{path}: malformed checkpoint ({exc})") from None
    hidden = tuple(actor.layer_sizes[1:-1])
    hyper = HyperParams(hidden=hidden, norm_eps=norm["eps"], norm_clip=norm["clip"])
    agent = Agent.for_spec(spec, hyper, np.random.default_rng(0))
    if actor.layer_sizes != agent.actor.layer_sizes or critic.layer_sizes != agent.critic.layer_sizes:
        raise CheckpointCorruptError(f"{path}: network shapes disagree with the env spec")
    agent.set_networks(actor, critic)
    try:
        agent.obs_norm = Normalizer(norm["obs_dim"], norm["eps"], norm["clip"])
        agent.obs_norm.load_state_dict(body["obs_norm"])
        agent.goal_norm = Normalizer(norm["goal_dim"], norm["eps"], norm["clip"])
        agent.goal_norm.load_state_dict(body["goal_norm"])
    except (KeyError, ContractError) as exc:
        raise CheckpointCorruptError(f"{path}: bad normalizer state ({exc})") from None
    return agent, spec, header


def load_primitive(path, target_spec, gripper_pad=-1.0):
    """Load a checkpoint's actor as a frozen primitive for ``target_spec``.

    Observation blocks are projected by name; a smaller action space is
    padded with ``gripper_pad`` and a larger one truncated.
    """
    agent, spec, _ = load_checkpoint(path)
    if spec.goal_dim != target_spec.goal_dim:
        raise CheckpointDimensionError(
            f"{path}: goal dim {spec.goal_dim} incompatible with {target_spec.name} "
            f"({target_spec.goal_dim})")
    try:
        projection_indices(target_spec, spec)
    except ContractError as exc:
        raise CheckpointDimensionError(f"{path}: {exc}") from None
    return Primitive(agent.actor, agent.obs_norm, agent.goal_norm, spec, target_spec,
                     gripper_pad, name=Path(path).stem)
