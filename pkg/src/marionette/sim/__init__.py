"""Planar articulated-character physics: topology, dynamics, observation."""

from .topology import (CharacterTopology, JointSpec, LinkSpec, TopologyError,
                       build_topology, default_character)
from .engine import (SimConfig, SimState, Simulator, SimulationDiverged,
                     UnknownPose)
from .observe import (observe, state_layout, foot_clearance,
                      joint_world_positions)

__all__ = [
    "CharacterTopology", "JointSpec", "LinkSpec", "TopologyError",
    "build_topology", "default_character", "SimConfig", "SimState",
    "Simulator", "SimulationDiverged", "UnknownPose", "observe",
    "state_layout", "foot_clearance", "joint_world_positions",
]
