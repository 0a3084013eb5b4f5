"""Sequential route-construction process for transit network design.

Networks are built route by route.  The process alternates between an
*extend* step, where a shortest path from the precomputed all-pairs set is
glued onto an end of the route under construction, and a *halt* step, where
the agent decides whether to finish the route.  Action filtering guarantees
that every emitted network has exactly the requested number of routes, each
a cycle-free street walk within the stop limits (length bounds can only be
undershot through the dead-end rule below).

A route that cannot be extended any further is committed as-is by the
environment ("force commit"); if it is still below the minimum length the
shortfall is charged through the constraint cost at scoring time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .city import CityGraph, Route, RouteNetwork, ShortestPathData
from .costs import CostBreakdown, CostWeights, total_cost

HALT = "halt"
CONTINUE = "continue"


class IllegalActionError(ValueError):
    """Raised when a step is attempted with an action not in the legal set."""


@dataclass(frozen=True)
class MdpState:
    finished_routes: RouteNetwork
    current_route: Route
    extend_mode: bool
    step_index: int


@dataclass(frozen=True)
class RolloutResult:
    routes: RouteNetwork
    log_probs: tuple  # one entry per agent decision; floats or autograd scalars
    reward: float
    cost: CostBreakdown
    modes: tuple[bool, ...]  # extend_mode of each agent-visible state
    force_commits: int


class Policy(Protocol):
    def choose_extension(
        self, mdp: "TransitMdp", state: MdpState, candidates: Sequence[Route], rng
    ) -> tuple[int, object]: ...

    def choose_halt(
        self, mdp: "TransitMdp", state: MdpState, allowed: tuple[str, ...], rng
    ) -> tuple[str, object]: ...


class _PathIndex:
    """Shortest paths grouped by endpoint for fast extension lookup."""

    def __init__(self, sp_data: ShortestPathData):
        n = sp_data.num_nodes
        self.paths: list[Route] = sp_data.ordered_paths()
        # plain lists and int bitmasks: the candidate scan is a hot loop
        self.lengths: list[int] = [len(p) for p in self.paths]
        self.masks: list[int] = [sum(1 << v for v in p) for p in self.paths]
        self.first = np.array([p[0] for p in self.paths])
        self.last = np.array([p[-1] for p in self.paths])
        self.by_first: list[list[int]] = [[] for _ in range(n)]
        self.by_last: list[list[int]] = [[] for _ in range(n)]
        for pid, path in enumerate(self.paths):
            self.by_first[path[0]].append(pid)
            self.by_last[path[-1]].append(pid)
        self.id_of = {p: i for i, p in enumerate(self.paths)}
        self.neighbor_lists: list[list[int]] | None = None


class TransitMdp:
    """Environment bundling a city, its shortest paths, and the cost setup."""

    def __init__(
        self,
        city: CityGraph,
        sp_data: ShortestPathData,
        weights: CostWeights,
        num_routes: int,
        min_stops: int,
        max_stops: int,
        path_index: "_PathIndex | None" = None,
    ):
        if not 2 <= min_stops <= max_stops:
            raise ValueError("need 2 <= min_stops <= max_stops")
        if num_routes < 1:
            raise ValueError("num_routes must be positive")
        self.city = city
        self.sp_data = sp_data
        self.weights = weights
        self.num_routes = num_routes
        self.min_stops = min_stops
        self.max_stops = max_stops
        # the index depends only on path structure, so problems over rescaled
        # versions of one city may share it
        self._index = path_index if path_index is not None else _PathIndex(sp_data)
        self._initial_ids: np.ndarray | None = None

    @property
    def path_index(self) -> "_PathIndex":
        return self._index

    # -- state and action sets ------------------------------------------------

    def initial_state(self, initial_routes: Sequence[Sequence[int]] = ()) -> MdpState:
        routes = tuple(tuple(r) for r in initial_routes)
        if len(routes) >= self.num_routes:
            raise ValueError("initial network must have fewer routes than requested")
        return MdpState(
            finished_routes=routes, current_route=(), extend_mode=True, step_index=0
        )

    def extend_action_ids(self, state: MdpState) -> np.ndarray:
        """Path ids of all legal extensions, ascending (see ``paths``)."""
        idx = self._index
        route = state.current_route
        if not route:
            if self._initial_ids is None:
                self._initial_ids = np.array(
                    [pid for pid, k in enumerate(idx.lengths) if k <= self.max_stops]
                )
            return self._initial_ids
        budget = self.max_stops - len(route)
        if budget <= 0:
            return np.array([], dtype=int)
        route_mask = sum(1 << v for v in route)
        if idx.neighbor_lists is None:
            idx.neighbor_lists = [[int(v) for v in row] for row in self.city.neighbors]
        neighbors = idx.neighbor_lists
        lengths, masks = idx.lengths, idx.masks
        pids: set[int] = set()
        for v in neighbors[route[-1]]:
            for pid in idx.by_first[v]:
                if lengths[pid] <= budget and not (masks[pid] & route_mask):
                    pids.add(pid)
        for u in neighbors[route[0]]:
            for pid in idx.by_last[u]:
                if lengths[pid] <= budget and not (masks[pid] & route_mask):
                    pids.add(pid)
        return np.array(sorted(pids), dtype=int)

    def extend_actions(self, state: MdpState) -> list[Route]:
        """Legal path extensions, in a fixed deterministic order."""
        return [self._index.paths[pid] for pid in self.extend_action_ids(state)]

    @property
    def paths(self) -> list[Route]:
        """All shortest paths, indexable by the ids from extend_action_ids."""
        return self._index.paths

    def path_id(self, path: Route) -> int:
        return self._index.id_of[path]

    def halt_actions(self, state: MdpState) -> tuple[str, ...]:
        k = len(state.current_route)
        if k < self.min_stops:
            return (CONTINUE,)
        if k == self.max_stops:
            return (HALT,)
        return (CONTINUE, HALT)

    def combine(self, route: Route, path: Route) -> Route:
        """Append ``path`` at whichever end of ``route`` is street-adjacent.

        Appending after the route's last stop is preferred when both ends
        match, so the operation is deterministic.
        """
        if not route:
            return path
        street = self.city.street_times
        if np.isfinite(street[route[-1], path[0]]):
            return route + path
        if np.isfinite(street[path[-1], route[0]]):
            return path + route
        raise IllegalActionError(f"path {path} does not attach to route {route}")

    # -- transitions ----------------------------------------------------------

    def step(self, state: MdpState, action) -> tuple[MdpState, float, bool, dict]:
        """Apply one agent action; returns (next_state, reward, terminal, info)."""
        if state.extend_mode:
            path = tuple(action)
            if path not in self._index.id_of:
                raise IllegalActionError(f"{path} is not a shortest path")
            combined = self.combine(state.current_route, path)
            if len(combined) > self.max_stops or len(set(combined)) != len(combined):
                raise IllegalActionError(f"extension {path} breaks route limits")
            next_state = MdpState(
                finished_routes=state.finished_routes,
                current_route=combined,
                extend_mode=False,
                step_index=state.step_index + 1,
            )
            return next_state, 0.0, False, {}

        if action not in self.halt_actions(state):
            raise IllegalActionError(f"{action!r} is not available")
        if action == CONTINUE:
            next_state = MdpState(
                finished_routes=state.finished_routes,
                current_route=state.current_route,
                extend_mode=True,
                step_index=state.step_index + 1,
            )
            return next_state, 0.0, False, {}
        return self._commit(state)

    def force_commit(self, state: MdpState) -> tuple[MdpState, float, bool, dict]:
        """Environment-side commit of a route that has no legal extension."""
        return self._commit(state)

    def _commit(self, state: MdpState) -> tuple[MdpState, float, bool, dict]:
        routes = state.finished_routes + (state.current_route,)
        next_state = MdpState(
            finished_routes=routes,
            current_route=(),
            extend_mode=True,
            step_index=state.step_index + 1,
        )
        if len(routes) == self.num_routes:
            breakdown = self.evaluate(routes)
            return next_state, -breakdown.total, True, {"cost": breakdown}
        return next_state, 0.0, False, {}

    def evaluate(self, routes: Sequence[Sequence[int]]) -> CostBreakdown:
        return total_cost(
            routes, self.city, self.weights, self.num_routes, self.min_stops, self.max_stops
        )

    # -- rollouts ---------------------------------------------------------------

    def rollout(
        self,
        policy: Policy,
        rng: np.random.Generator,
        initial_routes: Sequence[Sequence[int]] = (),
    ) -> RolloutResult:
        """Run the process to completion and collect per-decision log-probs."""
        state = self.initial_state(initial_routes)
        log_probs = []
        modes = []
        force_commits = 0
        while True:
            if state.extend_mode:
                candidates = self.extend_actions(state)
                if not candidates:
                    state, reward, terminal, info = self.force_commit(state)
                    force_commits += 1
                else:
                    modes.append(True)
                    choice, logp = policy.choose_extension(self, state, candidates, rng)
                    log_probs.append(logp)
                    state, reward, terminal, info = self.step(state, candidates[choice])
            else:
                modes.append(False)
                allowed = self.halt_actions(state)
                action, logp = policy.choose_halt(self, state, allowed, rng)
                log_probs.append(logp)
                state, reward, terminal, info = self.step(state, action)
            if terminal:
                return RolloutResult(
                    routes=state.finished_routes,
                    log_probs=tuple(log_probs),
                    reward=reward,
                    cost=info["cost"],
                    modes=tuple(modes),
                    force_commits=force_commits,
                )


class RandomPolicy:
    """Uniform choices over the legal actions; handy for tests and baselines."""

    def choose_extension(self, mdp, state, candidates, rng):
        i = int(rng.integers(len(candidates)))
        return i, -float(np.log(len(candidates)))

    def choose_halt(self, mdp, state, allowed, rng):
        i = int(rng.integers(len(allowed)))
        return allowed[i], -float(np.log(len(allowed)))
