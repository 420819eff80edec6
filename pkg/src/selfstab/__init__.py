"""Self-stabilizing MIS clustering among selfish agents: simulator and small-instance oracles."""

__version__ = "0.1.0"

from selfstab.algorithms import NAMES, build, reference_unique_mis
from selfstab.core import IN, OUT, AgentState, GainParams, is_mis
from selfstab.graph import Graph, generate_ba, generate_er

__all__ = [
    "NAMES", "build", "reference_unique_mis",
    "IN", "OUT", "AgentState", "GainParams", "is_mis",
    "Graph", "generate_ba", "generate_er",
]
