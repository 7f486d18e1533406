"""Graph-based swarm search-and-rescue simulator."""
from .mapgraph import MapFormatError, MapGraph, Node, Edge, generate_map, load_map
from .mission import (
    PATH_MODES, Mission, MissionState, Outcome, Platoon, SimConfig, TacticalAction,
    compute_reward, pareto_nodes, plan_path, update_probabilities,
)
from .scenario import AdversaryState, PlatoonSpec, Scenario, generate_scenario, load_scenario

__all__ = [
    "AdversaryState", "Edge", "MapFormatError", "MapGraph", "Mission", "MissionState", "Node", "Outcome",
    "PATH_MODES", "Platoon", "PlatoonSpec", "Scenario", "SimConfig", "TacticalAction", "compute_reward",
    "generate_map", "generate_scenario", "load_map", "load_scenario", "pareto_nodes", "plan_path",
    "update_probabilities",
]
