from ._backend import BACKEND
from .core import (
    AdamState,
    ForwardCache,
    GradientBundle,
    Mlp,
    adam_step,
    backward_cached,
    forward_cached,
    init_mlp,
    mlp_backward,
    mlp_forward,
    param_count,
    polyak_update,
)

__all__ = [
    "BACKEND",
    "AdamState",
    "ForwardCache",
    "GradientBundle",
    "Mlp",
    "adam_step",
    "backward_cached",
    "forward_cached",
    "init_mlp",
    "mlp_backward",
    "mlp_forward",
    "param_count",
    "polyak_update",
]
