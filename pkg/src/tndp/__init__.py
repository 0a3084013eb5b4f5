"""Transit network design: construction process, learned planner, bee colony search."""

from .city import (
    CityGraph,
    CityGraphError,
    Route,
    RouteNetwork,
    ShortestPathData,
    all_pairs_shortest_paths,
    route_drive_time,
    validate_network,
)
from .costs import (
    CostBreakdown,
    CostWeights,
    constraint_cost,
    operator_cost,
    passenger_cost,
    total_cost,
    transit_trip_times,
)
from .mdp import CONTINUE, HALT, MdpState, RandomPolicy, RolloutResult, TransitMdp

__all__ = [
    "CityGraph",
    "CityGraphError",
    "Route",
    "RouteNetwork",
    "ShortestPathData",
    "all_pairs_shortest_paths",
    "route_drive_time",
    "validate_network",
    "CostBreakdown",
    "CostWeights",
    "constraint_cost",
    "operator_cost",
    "passenger_cost",
    "total_cost",
    "transit_trip_times",
    "CONTINUE",
    "HALT",
    "MdpState",
    "RandomPolicy",
    "RolloutResult",
    "TransitMdp",
]
