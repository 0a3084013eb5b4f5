"""City graphs, shortest paths, and route-level time accounting.

A city is an undirected street network over candidate stop locations plus an
origin-destination demand matrix.  All travel times are stored in seconds.
Transit routes are walks on the street graph without repeated nodes, written
as tuples of node indices.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, dijkstra

Route = tuple[int, ...]
RouteNetwork = tuple[Route, ...]

# Absolute tolerance for comparing travel times, in seconds.
TIME_TOL = 1e-9


class CityGraphError(ValueError):
    """Raised when a city graph violates its structural invariants."""


@dataclass(frozen=True)
class CityGraph:
    """Street network with node coordinates and symmetric travel demand.

    ``street_times[i, j]`` is the drive time of the street edge (i, j) in
    seconds, or ``inf`` where no street connects i and j directly.  The
    matrix must be symmetric with an all-``inf`` diagonal; ``demand`` must be
    symmetric with a zero diagonal.
    """

    node_positions: np.ndarray  # (n, 2), meters
    street_times: np.ndarray  # (n, n), seconds, inf = no street edge
    demand: np.ndarray  # (n, n), trips

    def __post_init__(self):
        pos = np.array(self.node_positions, dtype=float)
        times = np.array(self.street_times, dtype=float)
        dem = np.array(self.demand, dtype=float)
        for name, arr in (("node_positions", pos), ("street_times", times), ("demand", dem)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_edges(
        cls,
        node_positions: Sequence[Sequence[float]],
        edges: Iterable[tuple[int, int, float]],
        demand: np.ndarray,
    ) -> "CityGraph":
        """Build a city from an undirected edge list (both directions added)."""
        pos = np.asarray(node_positions, dtype=float)
        n = len(pos)
        times = np.full((n, n), np.inf)
        for i, j, tau in edges:
            times[i, j] = tau
            times[j, i] = tau
        return cls(pos, times, np.asarray(demand, dtype=float))

    @property
    def num_nodes(self) -> int:
        return self.street_times.shape[0]

    @cached_property
    def neighbors(self) -> tuple[np.ndarray, ...]:
        """Street neighbors of each node, ascending."""
        return tuple(np.flatnonzero(np.isfinite(row)) for row in self.street_times)

    def street_edges(self) -> list[tuple[int, int, float]]:
        """Directed street edges (i, j, seconds); symmetric pairs both listed."""
        ii, jj = np.nonzero(np.isfinite(self.street_times))
        return [(int(i), int(j), float(self.street_times[i, j])) for i, j in zip(ii, jj)]

    def validate(self) -> None:
        """Raise CityGraphError unless all structural invariants hold."""
        n = self.num_nodes
        if self.node_positions.shape != (n, 2):
            raise CityGraphError(f"node_positions must be ({n}, 2)")
        if self.demand.shape != (n, n):
            raise CityGraphError(f"demand must be ({n}, {n})")
        finite = np.isfinite(self.street_times)
        if finite.diagonal().any():
            raise CityGraphError("self-loop street edges are not allowed")
        if not np.array_equal(finite, finite.T):
            raise CityGraphError("street edges must come in symmetric pairs")
        if not np.array_equal(
            self.street_times[finite], self.street_times.T[finite]
        ):
            raise CityGraphError("street edge times must be symmetric")
        if (self.street_times[finite] <= 0).any():
            raise CityGraphError("street edge times must be positive")
        if not np.allclose(self.demand, self.demand.T):
            raise CityGraphError("demand must be symmetric")
        if np.abs(self.demand.diagonal()).max(initial=0.0) > 0:
            raise CityGraphError("demand diagonal must be zero")
        if (self.demand < 0).any():
            raise CityGraphError("demand must be nonnegative")
        n_comp, _ = connected_components(
            csr_matrix(np.nan_to_num(finite.astype(float))), directed=True, connection="strong"
        )
        if n_comp != 1:
            raise CityGraphError("street graph is not strongly connected")


@dataclass(frozen=True)
class ShortestPathData:
    """All-pairs shortest drive times and one canonical path per ordered pair.

    Ties between equal-time paths are broken by the lexicographically
    smallest node sequence, which makes every consumer of this data
    deterministic.  ``paths`` has an entry for every ordered pair (i, j)
    with i != j; diagonal pairs are excluded.
    """

    times: np.ndarray  # (n, n), seconds
    next_hop: np.ndarray  # (n, n), int; -1 on the diagonal
    paths: dict[tuple[int, int], Route]

    def __post_init__(self):
        self.times.setflags(write=False)
        self.next_hop.setflags(write=False)

    @property
    def num_nodes(self) -> int:
        return self.times.shape[0]

    @property
    def max_time(self) -> float:
        return float(self.times.max())

    def path(self, i: int, j: int) -> Route:
        return self.paths[(i, j)]

    def ordered_paths(self) -> list[Route]:
        """All stored shortest paths in a fixed (origin-major) order."""
        n = self.num_nodes
        return [self.paths[(i, j)] for i in range(n) for j in range(n) if i != j]


def all_pairs_shortest_paths(city: CityGraph) -> ShortestPathData:
    """Compute shortest drive times and canonical shortest paths.

    Raises CityGraphError if some pair is unreachable.  The canonical path
    for (i, j) is reconstructed greedily by always stepping to the smallest
    neighbor that stays on a shortest path, which yields the
    lexicographically smallest shortest node sequence.
    """
    n = city.num_nodes
    w = city.street_times
    finite = np.isfinite(w)
    graph = csr_matrix((w[finite], np.nonzero(finite)), shape=(n, n))
    times = dijkstra(graph, directed=True)
    if np.isinf(times).any():
        i, j = np.argwhere(np.isinf(times))[0]
        raise CityGraphError(f"no street path from node {i} to node {j}")

    w_safe = np.where(finite, w, np.inf)
    next_hop = np.full((n, n), -1, dtype=np.int64)
    for i in range(n):
        # feasible[v, j]: stepping i -> v stays on a shortest path to j
        feasible = w_safe[i][:, None] + times <= times[i][None, :] + TIME_TOL
        next_hop[i] = np.argmax(feasible, axis=0)
    np.fill_diagonal(next_hop, -1)

    paths: dict[tuple[int, int], Route] = {}
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            node = i
            seq = [i]
            while node != j:
                node = int(next_hop[node, j])
                seq.append(node)
            paths[(i, j)] = tuple(seq)
    return ShortestPathData(times=times, next_hop=next_hop, paths=paths)


def route_drive_time(route: Sequence[int], city: CityGraph) -> float:
    """Round-trip drive time of a route (traversed in both directions)."""
    total = 0.0
    for a, b in zip(route, route[1:]):
        tau = city.street_times[a, b]
        if not np.isfinite(tau):
            raise CityGraphError(f"route hop ({a}, {b}) is not a street edge")
        total += tau
    return 2.0 * total


@dataclass(frozen=True)
class NetworkValidation:
    """Constraint report for a candidate route network."""

    connected: bool
    route_count: int
    expected_route_count: int
    length_violations: dict[int, int]  # route index -> stops out of bounds
    cycle_violations: tuple[int, ...]  # route indices with repeated nodes
    broken_hops: tuple[tuple[int, int, int], ...]  # (route index, a, b) not a street edge

    @property
    def all_ok(self) -> bool:
        return (
            self.connected
            and self.route_count == self.expected_route_count
            and not self.length_violations
            and not self.cycle_violations
            and not self.broken_hops
        )


def transit_adjacency(routes: Sequence[Sequence[int]], n: int) -> np.ndarray:
    """Boolean (n, n) adjacency of consecutive stops across all routes."""
    adj = np.zeros((n, n), dtype=bool)
    for route in routes:
        for a, b in zip(route, route[1:]):
            adj[a, b] = True
            adj[b, a] = True
    return adj


def network_is_connected(routes: Sequence[Sequence[int]], n: int) -> bool:
    """True when every node can reach every other node via the routes."""
    if n == 0:
        return True
    adj = transit_adjacency(routes, n)
    n_comp, _ = connected_components(csr_matrix(adj.astype(float)), directed=False)
    return n_comp == 1


def validate_network(
    routes: Sequence[Sequence[int]],
    city: CityGraph,
    num_routes: int,
    min_stops: int,
    max_stops: int,
) -> NetworkValidation:
    """Report how a network fares against the count/length/cycle/connectivity constraints."""
    length_violations: dict[int, int] = {}
    cycles = []
    broken = []
    for k, route in enumerate(routes):
        if len(route) < min_stops:
            length_violations[k] = min_stops - len(route)
        elif len(route) > max_stops:
            length_violations[k] = len(route) - max_stops
        if len(set(route)) != len(route):
            cycles.append(k)
        for a, b in zip(route, route[1:]):
            if not np.isfinite(city.street_times[a, b]):
                broken.append((k, int(a), int(b)))
    return NetworkValidation(
        connected=network_is_connected(routes, city.num_nodes),
        route_count=len(routes),
        expected_route_count=num_routes,
        length_violations=length_violations,
        cycle_violations=tuple(cycles),
        broken_hops=tuple(broken),
    )
