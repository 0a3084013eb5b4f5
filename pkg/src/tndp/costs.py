"""Scoring of route networks: passenger, operator, and constraint costs.

The total score blends a demand-weighted mean transit trip time (with a
fixed penalty per transfer), the total round-trip driving time of all
routes, and a penalty for disconnected node pairs and out-of-bounds route
lengths.  Passenger and operator terms are rescaled by constants derived
from the city's shortest-path times so both land roughly in [0, 1).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, dijkstra

from .city import (
    CityGraph,
    ShortestPathData,
    network_is_connected,
    route_drive_time,
    transit_adjacency,
)

DEFAULT_TRANSFER_PENALTY = 300.0  # seconds
DEFAULT_BETA = 5.0


@dataclass(frozen=True)
class CostWeights:
    """Weights of the blended network score.

    ``passenger_scale`` and ``operator_scale`` are the rescaling constants
    1 / max(T) and 1 / (3 * num_routes * max(T)), where T is the all-pairs
    shortest drive time matrix of the city the weights were built for.
    """

    alpha: float
    beta: float
    transfer_penalty: float  # seconds per route change
    passenger_scale: float  # 1 / seconds
    operator_scale: float  # 1 / seconds

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")

    @classmethod
    def for_problem(
        cls,
        sp_data: ShortestPathData,
        num_routes: int,
        alpha: float,
        beta: float = DEFAULT_BETA,
        transfer_penalty: float = DEFAULT_TRANSFER_PENALTY,
    ) -> "CostWeights":
        max_time = sp_data.max_time
        return cls(
            alpha=alpha,
            beta=beta,
            transfer_penalty=transfer_penalty,
            passenger_scale=1.0 / max_time,
            operator_scale=1.0 / (3.0 * num_routes * max_time),
        )


@dataclass(frozen=True)
class CostBreakdown:
    """Itemized score of one route network."""

    passenger_cost: float  # seconds; demand-weighted mean served trip time
    operator_cost: float  # seconds; total round-trip drive time
    constraint_cost: float  # dimensionless
    total: float  # dimensionless
    unserved_fraction: float  # fraction of demand between unconnected pairs


def transit_trip_times(
    routes: Sequence[Sequence[int]],
    city: CityGraph,
    transfer_penalty: float = DEFAULT_TRANSFER_PENALTY,
) -> np.ndarray:
    """Shortest transit trip time between all node pairs, inf if unreachable.

    A trip rides route segments at street-edge speeds and pays
    ``transfer_penalty`` seconds for every route change (the first boarding
    is free).  Computed exactly by shortest-path search over an expanded
    graph with one vertex per (route, stop) incidence plus one per node:
    boarding costs the penalty, alighting is free, and the first boarding's
    penalty is subtracted afterwards.  Transfers are not capped.
    """
    n = city.num_nodes
    heads: list[int] = []
    tails: list[int] = []
    costs: list[float] = []
    base = n
    for route in routes:
        for pos, stop in enumerate(route):
            vertex = base + pos
            heads.append(vertex)
            tails.append(stop)
            costs.append(0.0)  # alight
            heads.append(stop)
            tails.append(vertex)
            costs.append(transfer_penalty)  # board
            if pos + 1 < len(route):
                tau = float(city.street_times[stop, route[pos + 1]])
                heads.append(vertex)
                tails.append(vertex + 1)
                costs.append(tau)
                heads.append(vertex + 1)
                tails.append(vertex)
                costs.append(tau)
        base += len(route)

    trip = np.full((n, n), np.inf)
    np.fill_diagonal(trip, 0.0)
    if heads:
        graph = csr_matrix(
            (np.asarray(costs), (np.asarray(heads), np.asarray(tails))), shape=(base, base)
        )
        dist = dijkstra(graph, directed=True, indices=np.arange(n))
        reached = np.isfinite(dist[:, :n])
        np.fill_diagonal(reached, False)
        trip[reached] = dist[:, :n][reached] - transfer_penalty
    return trip


def passenger_cost(trip_times: np.ndarray, demand: np.ndarray) -> tuple[float, float]:
    """Demand-weighted mean trip time over served pairs, in seconds.

    Unreachable pairs are excluded from the mean (they are charged through
    the constraint cost instead).  Returns (mean time, unserved demand
    fraction); the mean is 0 when no demand is served at all.
    """
    total_demand = float(demand.sum())
    if total_demand <= 0:
        raise ValueError("total demand is zero")
    served = np.isfinite(trip_times)
    served_demand = float(demand[served].sum())
    unserved_fraction = 1.0 - served_demand / total_demand
    if served_demand <= 0:
        return 0.0, unserved_fraction
    mean_time = float((demand[served] * trip_times[served]).sum()) / served_demand
    return mean_time, unserved_fraction


def operator_cost(routes: Sequence[Sequence[int]], city: CityGraph) -> float:
    """Total round-trip drive time of all routes, in seconds."""
    return sum(route_drive_time(route, city) for route in routes)


def length_violation(
    routes: Sequence[Sequence[int]], num_routes: int, min_stops: int, max_stops: int
) -> float:
    """Total stops out of bounds, normalized by num_routes * max_stops."""
    excess = sum(
        max(0, len(r) - max_stops) + max(0, min_stops - len(r)) for r in routes
    )
    return excess / (num_routes * max_stops)


def constraint_cost(
    routes: Sequence[Sequence[int]],
    city: CityGraph,
    num_routes: int,
    min_stops: int,
    max_stops: int,
) -> float:
    """Fraction of unconnected ordered node pairs plus normalized length violations."""
    n = city.num_nodes
    adj = transit_adjacency(routes, n)
    _, labels = connected_components(csr_matrix(adj.astype(float)), directed=False)
    same = labels[:, None] == labels[None, :]
    unconnected = int((~same).sum())  # ordered pairs, diagonal always connected
    frac_unconnected = unconnected / (n * (n - 1)) if n > 1 else 0.0
    return frac_unconnected + length_violation(routes, num_routes, min_stops, max_stops)


def total_cost(
    routes: Sequence[Sequence[int]],
    city: CityGraph,
    weights: CostWeights,
    num_routes: int,
    min_stops: int,
    max_stops: int,
) -> CostBreakdown:
    """Full cost breakdown of a route network under the given weights."""
    trips = transit_trip_times(routes, city, weights.transfer_penalty)
    mean_trip, unserved = passenger_cost(trips, city.demand)
    drive = operator_cost(routes, city)

    n = city.num_nodes
    off_diag = ~np.eye(n, dtype=bool)
    unconnected = int((~np.isfinite(trips) & off_diag).sum())
    frac_unconnected = unconnected / (n * (n - 1)) if n > 1 else 0.0
    penalty = frac_unconnected + length_violation(routes, num_routes, min_stops, max_stops)

    total = (
        weights.alpha * weights.passenger_scale * mean_trip
        + (1.0 - weights.alpha) * weights.operator_scale * drive
        + weights.beta * penalty
    )
    return CostBreakdown(
        passenger_cost=mean_trip,
        operator_cost=drive,
        constraint_cost=penalty,
        total=total,
        unserved_fraction=unserved,
    )
