"""Dense MLPs with hand-written reverse mode, Adam and Polyak averaging.

All parameters of a network live in one flat float64 buffer laid out layer
by layer as ``W_0 (row-major, out x in), b_0, W_1, b_1, ...``. Per-layer
weights and biases are views into that buffer, so optimizers and target
updates operate on a single vector and checkpoints can store it verbatim.
"""

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError, NumericalDivergenceError
from ._backend import kernels

ACTIVATIONS = ("relu", "tanh", "identity")


def _layer_views(flat, layer_sizes):
    weights, biases = [], []
    offset = 0
    for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        weights.append(flat[offset : offset + n_in * n_out].reshape(n_out, n_in))
        offset += n_in * n_out
        biases.append(flat[offset : offset + n_out])
        offset += n_out
    return weights, biases


def param_count(layer_sizes):
    return sum(i * o + o for i, o in zip(layer_sizes[:-1], layer_sizes[1:]))


class Mlp:
    """Fully connected network with relu hidden layers.

    ``output_activation`` is ``"tanh"`` for actors and ``"identity"`` for
    critics.
    """

    def __init__(self, layer_sizes, params=None, output_activation="identity",
                 hidden_activation="relu"):
        layer_sizes = [int(n) for n in layer_sizes]
        if len(layer_sizes) < 2 or any(n <= 0 for n in layer_sizes):
            raise ContractError(f"layer sizes must be >= 2 positive ints, got {layer_sizes}")
        if hidden_activation != "relu":
            raise ContractError(f"unsupported hidden activation {hidden_activation!r}")
        if output_activation not in ("tanh", "identity"):
            raise ContractError(f"unsupported output activation {output_activation!r}")
        n = param_count(layer_sizes)
        if params is None:
            params = np.zeros(n)
        else:
            params = np.ascontiguousarray(params, dtype=np.float64).ravel()
            if params.size != n:
                raise ContractError(f"expected {n} parameters for {layer_sizes}, got {params.size}")
        self.layer_sizes = layer_sizes
        self.output_activation = output_activation
        self.hidden_activation = hidden_activation
        self.params = params
        self.weights, self.biases = _layer_views(self.params, layer_sizes)

    @property
    def in_dim(self):
        return self.layer_sizes[0]

    @property
    def out_dim(self):
        return self.layer_sizes[-1]

    def copy(self):
        return Mlp(self.layer_sizes, self.params.copy(), self.output_activation,
                   self.hidden_activation)

    def __deepcopy__(self, memo):
        return self.copy()

    def congruent(self, other):
        return (self.layer_sizes == other.layer_sizes
                and self.output_activation == other.output_activation)

    def __call__(self, x):
        return mlp_forward(self, x)

    def __repr__(self):
        return f"Mlp({self.layer_sizes}, out={self.output_activation})"


def init_mlp(layer_sizes, rng, output_activation="identity", output_scale=3e-3):
    """He-uniform hidden layers, small uniform output layer, zero biases."""
    net = Mlp(layer_sizes, output_activation=output_activation)
    last = len(net.weights) - 1
    for li, w in enumerate(net.weights):
        if li < last:
            limit = np.sqrt(6.0 / w.shape[1])
        else:
            limit = output_scale
        w[...] = rng.uniform(-limit, limit, size=w.shape)
    return net


@dataclass
class GradientBundle:
    """Gradients shape-congruent with an :class:`Mlp` plus the input gradient."""

    layer_sizes: list
    flat: np.ndarray
    input_grad: np.ndarray = None
    weights: list = field(init=False, repr=False)
    biases: list = field(init=False, repr=False)

    def __post_init__(self):
        self.weights, self.biases = _layer_views(self.flat, self.layer_sizes)

    @classmethod
    def zeros_like(cls, net):
        return cls(list(net.layer_sizes), np.zeros_like(net.params))

    def is_finite(self):
        return bool(np.isfinite(self.flat).all())


@dataclass
class ForwardCache:
    x: np.ndarray
    y: np.ndarray
    pre_out: np.ndarray
    acts: list
    squeeze: bool


def _as_batch(net, x):
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ContractError(
            f"input dimension mismatch: expected {net.in_dim}, got {x.shape[-1] if x.ndim else 0}")
    return np.ascontiguousarray(x), squeeze


def forward_cached(net, x):
    xb, squeeze = _as_batch(net, x)
    y, acts, pre_out = kernels.forward(net.weights, net.biases, xb,
                                       net.output_activation == "tanh")
    return ForwardCache(xb, y, pre_out, acts, squeeze)


def mlp_forward(net, x):
    """Evaluate ``net`` on a vector ``(in,)`` or a batch ``(B, in)``."""
    cache = forward_cached(net, x)
    return cache.y[0] if cache.squeeze else cache.y


def backward_cached(net, cache, upstream, pre_out_grad=None, out=None):
    """Reverse pass from a :func:`forward_cached` result.

    ``upstream`` is the gradient w.r.t. the (post-activation) output;
    ``pre_out_grad`` is added directly at the output pre-activation, which
    lets callers penalize pre-tanh values without dividing by ``1 - y**2``.
    """
    up = np.asarray(upstream, dtype=np.float64)
    if up.ndim == 1:
        up = up[None, :]
    if up.shape != cache.y.shape:
        raise ContractError(
            f"upstream gradient length mismatch: expected {cache.y.shape[-1]}, got {up.shape[-1]}")
    grads = out if out is not None else GradientBundle.zeros_like(net)
    extra = None
    if pre_out_grad is not None:
        extra = np.ascontiguousarray(np.asarray(pre_out_grad, dtype=np.float64).reshape(up.shape))
    dx = kernels.backward(net.weights, cache.acts, cache.y, np.ascontiguousarray(up),
                          net.output_activation == "tanh", extra, grads.weights, grads.biases)
    grads.input_grad = dx[0] if cache.squeeze else dx
    return grads


def mlp_backward(net, x, upstream_grad):
    """Exact gradients of ``sum(net(x) * upstream_grad)`` w.r.t. parameters and input."""
    cache = forward_cached(net, x)
    return backward_cached(net, cache, upstream_grad)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_net(cls, net, learning_rate=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(np.zeros_like(net.params), np.zeros_like(net.params), 0,
                   learning_rate, beta1, beta2, eps)

    def copy(self):
        return AdamState(self.m.copy(), self.v.copy(), self.step, self.learning_rate,
                         self.beta1, self.beta2, self.eps)


def adam_step(net, grads, state):
    """Apply one bias-corrected Adam update in place; returns ``(net, state)``."""
    if grads.flat.shape != net.params.shape or state.m.shape != net.params.shape:
        raise ContractError("adam_step: parameters, gradients and moments are not congruent")
    if not grads.is_finite():
        raise NumericalDivergenceError("non-finite gradient component; update aborted")
    state.step += 1
    kernels.adam(net.params, grads.flat, state.m, state.v, state.learning_rate,
                 state.beta1, state.beta2, state.eps, state.step)
    return net, state


def polyak_update(target, online, tau):
    """``target <- (1 - tau) * target + tau * online`` element-wise, in place."""
    if not target.congruent(online):
        raise ContractError(
            f"polyak_update: shape mismatch {target.layer_sizes} vs {online.layer_sizes}")
    if not 0.0 <= tau <= 1.0:
        raise ContractError(f"tau must lie in [0, 1], got {tau}")
    kernels.polyak(target.params, online.params, float(tau))
    return target
