"""Optimal information disclosure by a major player facing a mean field of small players.

The package solves belief-conditioned mean field games on revelation trees,
optimises the tree, encodes it into signalling controls and checks the result
against an N-player simulation.
"""

from .config import RunConfig, load_run_config
from .model import Belief, ConfigError, ModelSpec, make_model
from .solver import MFGSolution, SolverConfig, solve_mfg
from .tree import RevelationTree, full_reveal, no_reveal

__all__ = [
    "Belief",
    "ConfigError",
    "MFGSolution",
    "ModelSpec",
    "RevelationTree",
    "RunConfig",
    "SolverConfig",
    "full_reveal",
    "load_run_config",
    "make_model",
    "no_reveal",
    "solve_mfg",
]
