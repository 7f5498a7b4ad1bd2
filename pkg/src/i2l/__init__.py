"""Distill opaque traffic controllers into decision trees over synthesized features."""

__version__ = "0.1.0"

from .simulator import ActionSpace, EpisodeHistory, MarkovState, SimParams, run_episode
from .topology import TrackTopology, preset, resolve_topology
from .tree import DecisionTree, LossFunction, PruneSequence, grow, impurity, mccp

__all__ = [
    "ActionSpace", "DecisionTree", "EpisodeHistory", "LossFunction",
    "MarkovState", "PruneSequence", "SimParams", "TrackTopology",
    "__version__", "grow", "impurity", "mccp", "preset", "resolve_topology",
    "run_episode",
]
