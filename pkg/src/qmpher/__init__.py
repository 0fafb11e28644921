"""DDPG + HER with Q-switched primitive ensembles on kinematic toy tasks."""

from .nn._backend import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
