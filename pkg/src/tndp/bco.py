"""Bee-colony search over route networks.

A fixed colony of candidate solutions ("bees") alternates between
exploration, where each bee applies a few random modifications and keeps
them only if the cost does not increase, and recruitment, where bees with
poor solutions probabilistically abandon them and copy better ones.  Bees
come in three flavors: terminal-to-terminal shortest-path replacement,
terminal add/delete, and full single-route replanning with the learned
policy.  The variants differ only in the bee mix.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix

from .city import Route, RouteNetwork, ShortestPathData
from .costs import CostBreakdown
from .mdp import TransitMdp

TYPE1 = "type1"
TYPE2 = "type2"
NEURAL = "neural"

BEE_MIXES = {
    "classic": (TYPE1, TYPE2),  # half and half
    "neural": (NEURAL, TYPE2),
    "neural_only": (NEURAL,),
}


@dataclass(frozen=True)
class BcoConfig:
    num_bees: int = 10
    modifications_per_pass: int = 2
    passes_per_iteration: int = 5
    iterations: int = 400
    bee_mix: str = "classic"
    type2_delete_prob: float = 0.2

    def __post_init__(self):
        if min(self.num_bees, self.modifications_per_pass, self.passes_per_iteration) < 1:
            raise ValueError("colony parameters must be at least 1")
        if self.iterations < 0:
            raise ValueError("iterations must be nonnegative")
        if self.bee_mix not in BEE_MIXES:
            raise ValueError(f"bee_mix must be one of {sorted(BEE_MIXES)}")

    def bee_types(self) -> tuple[str, ...]:
        kinds = BEE_MIXES[self.bee_mix]
        if len(kinds) == 1:
            return kinds * self.num_bees
        half = self.num_bees // 2
        return kinds[0:1] * half + kinds[1:2] * (self.num_bees - half)

    @property
    def total_candidates(self) -> int:
        return (
            self.num_bees
            * self.modifications_per_pass
            * self.passes_per_iteration
            * self.iterations
        )


@dataclass
class BeeState:
    routes: RouteNetwork
    cost: CostBreakdown
    bee_type: str
    is_follower: bool = False


@dataclass
class BcoResult:
    best_routes: RouteNetwork
    best_cost: CostBreakdown
    cost_trace: list[float]  # incumbent total after each iteration
    candidates_evaluated: int
    wall_time: float


def route_direct_demand(route: Route, demand: np.ndarray) -> float:
    """Demand directly satisfied by one route (each unordered pair once)."""
    if len(route) < 2:
        return 0.0
    hops = np.asarray(route)
    return float(demand[np.ix_(hops, hops)].sum()) / 2.0


def route_selection_probs(routes: RouteNetwork, demand: np.ndarray) -> np.ndarray:
    """Selection weights favoring routes that directly serve little demand."""
    served = np.array([route_direct_demand(r, demand) for r in routes])
    eps = 0.01 * served.sum() / len(routes)
    weights = served.max() - served + eps
    total = weights.sum()
    if total <= 0:
        return np.full(len(routes), 1.0 / len(routes))
    return weights / total


def select_route(routes: RouteNetwork, demand: np.ndarray, rng: np.random.Generator) -> int:
    return int(rng.choice(len(routes), p=route_selection_probs(routes, demand)))


def type1_modify(
    network: RouteNetwork,
    route_idx: int,
    sp_data: ShortestPathData,
    rng: np.random.Generator,
) -> RouteNetwork:
    """Replace one terminal with a random node; the route becomes the
    shortest path between the kept terminal and the new one."""
    route = network[route_idx]
    replace_start = bool(rng.integers(2))
    kept = route[-1] if replace_start else route[0]
    n = sp_data.num_nodes
    choices = np.setdiff1d(np.arange(n), [kept])
    new_terminal = int(rng.choice(choices))
    if replace_start:
        new_route = sp_data.paths[(new_terminal, kept)]
    else:
        new_route = sp_data.paths[(kept, new_terminal)]
    return network[:route_idx] + (new_route,) + network[route_idx + 1 :]


def type2_modify(
    network: RouteNetwork,
    route_idx: int,
    neighbors: tuple[np.ndarray, ...],
    rng: np.random.Generator,
    delete_prob: float = 0.2,
) -> RouteNetwork:
    """Delete a terminal (small probability) or grow one by a street neighbor.

    Falls back to a no-op when the deletion would empty the route or no
    neighbor off the route exists.
    """
    route = network[route_idx]
    at_start = bool(rng.integers(2))
    if rng.random() < delete_prob:
        if len(route) <= 1:
            return network
        new_route = route[1:] if at_start else route[:-1]
    else:
        terminal = route[0] if at_start else route[-1]
        on_route = set(route)
        options = [int(v) for v in neighbors[terminal] if int(v) not in on_route]
        if not options:
            return network
        new_node = options[int(rng.integers(len(options)))]
        new_route = (new_node,) + route if at_start else route + (new_node,)
    return network[:route_idx] + (new_route,) + network[route_idx + 1 :]


def recruitment(bees: list[BeeState], rng: np.random.Generator) -> None:
    """Reassign follower bees to copies of probabilistically chosen recruiters."""
    costs = np.array([bee.cost.total for bee in bees])
    spread = costs.max() - costs.min()
    if spread <= 0:
        for bee in bees:
            bee.is_follower = False
        return
    follow_probs = (costs - costs.min()) / spread
    draws = rng.random(len(bees))
    for bee, p, u in zip(bees, follow_probs, draws):
        bee.is_follower = bool(u < p)
    recruiters = [bee for bee in bees if not bee.is_follower]
    if not recruiters:
        best = min(range(len(bees)), key=lambda i: (costs[i], i))
        bees[best].is_follower = False
        recruiters = [bees[best]]
    rec_costs = np.array([bee.cost.total for bee in recruiters])
    eps = 0.01 * rec_costs.max() + 1e-12
    weights = rec_costs.max() - rec_costs + eps
    probs = weights / weights.sum()
    for bee in bees:
        if bee.is_follower:
            source = recruiters[int(rng.choice(len(recruiters), p=probs))]
            bee.routes = source.routes
            bee.cost = source.cost


def initial_network(
    mdp: TransitMdp,
    rng: np.random.Generator,
) -> RouteNetwork:
    """Greedy seed network: repeatedly take the in-bounds shortest path that
    covers the most not-yet-served demand, with random tie-breaking."""
    sp = mdp.sp_data
    demand = mdp.city.demand
    n = mdp.city.num_nodes
    paths = [
        p for p in sp.ordered_paths() if mdp.min_stops <= len(p) <= mdp.max_stops
    ]
    if not paths:
        raise ValueError("no shortest path fits the stop limits")
    pair_id = {}
    rows, cols = [], []
    for pid, path in enumerate(paths):
        for a in range(len(path)):
            for b in range(a + 1, len(path)):
                i, j = min(path[a], path[b]), max(path[a], path[b])
                key = pair_id.setdefault((i, j), len(pair_id))
                rows.append(pid)
                cols.append(key)
    coverage = csr_matrix(
        (np.ones(len(rows)), (rows, cols)), shape=(len(paths), len(pair_id))
    )
    unserved = np.zeros(len(pair_id))
    for (i, j), key in pair_id.items():
        unserved[key] = demand[i, j] + demand[j, i]

    routes = []
    for _ in range(mdp.num_routes):
        scores = coverage @ unserved
        best = scores.max()
        ties = np.flatnonzero(scores >= best - 1e-12)
        pick = int(ties[rng.integers(len(ties))])
        routes.append(paths[pick])
        covered = coverage[pick].indices
        unserved[covered] = 0.0
    return tuple(routes)


def run_bco(
    mdp: TransitMdp,
    config: BcoConfig,
    rng: np.random.Generator,
    initial_routes: RouteNetwork | None = None,
    model=None,
    trace_callback=None,
) -> BcoResult:
    """Full colony search; returns the lowest-cost network ever evaluated."""
    types = config.bee_types()
    if NEURAL in types and model is None:
        raise ValueError("neural bees need a trained model")
    if initial_routes is None:
        initial_routes = initial_network(mdp, rng)
    initial_routes = tuple(tuple(r) for r in initial_routes)
    if len(initial_routes) != mdp.num_routes:
        raise ValueError(
            f"initial network has {len(initial_routes)} routes, expected {mdp.num_routes}"
        )

    start = time.perf_counter()
    base_cost = mdp.evaluate(initial_routes)
    bees = [BeeState(routes=initial_routes, cost=base_cost, bee_type=t) for t in types]
    best_routes, best_cost = initial_routes, base_cost
    evaluated = 0
    trace: list[float] = []

    for iteration in range(config.iterations):
        for _ in range(config.passes_per_iteration):
            for _ in range(config.modifications_per_pass):
                candidates = _propose_all(mdp, bees, config, rng, model)
                for bee, (candidate, cost) in zip(bees, candidates):
                    evaluated += 1
                    if cost is None:
                        cost = bee.cost if candidate == bee.routes else mdp.evaluate(candidate)
                    if cost.total <= bee.cost.total:
                        bee.routes = candidate
                        bee.cost = cost
                    if cost.total < best_cost.total:
                        best_routes, best_cost = candidate, cost
            recruitment(bees, rng)
        trace.append(best_cost.total)
        if trace_callback is not None:
            trace_callback(iteration, best_cost.total)

    return BcoResult(
        best_routes=best_routes,
        best_cost=best_cost,
        cost_trace=trace,
        candidates_evaluated=evaluated,
        wall_time=time.perf_counter() - start,
    )


def _propose_all(mdp, bees, config, rng, model):
    """One (candidate, known cost or None) per bee; neural replannings batch."""
    demand = mdp.city.demand
    proposals: list[tuple[RouteNetwork, CostBreakdown | None] | None] = [None] * len(bees)
    neural_jobs = []  # (bee position, remaining routes)
    for pos, bee in enumerate(bees):
        idx = select_route(bee.routes, demand, rng)
        if bee.bee_type == TYPE1:
            proposals[pos] = (type1_modify(bee.routes, idx, mdp.sp_data, rng), None)
        elif bee.bee_type == TYPE2:
            candidate = type2_modify(
                bee.routes, idx, mdp.city.neighbors, rng, config.type2_delete_prob
            )
            proposals[pos] = (candidate, None)
        else:
            remaining = bee.routes[:idx] + bee.routes[idx + 1 :]
            neural_jobs.append((pos, remaining))
    if neural_jobs:
        from .planner import run_batch

        results = run_batch(model, [(mdp, remaining) for _, remaining in neural_jobs], rng)
        for (pos, _), result in zip(neural_jobs, results):
            proposals[pos] = (result.routes, result.cost)
    return proposals
