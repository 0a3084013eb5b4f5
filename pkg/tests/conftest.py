import numpy as np
import pytest
import torch

from tndp.city import CityGraph, all_pairs_shortest_paths
from tndp.costs import CostWeights
from tndp.mdp import TransitMdp

torch.set_num_threads(2)

DATA_DIR = "data/benchmarks"


@pytest.fixture
def line_city():
    """0 - 1 - 2 chain, 60 s per edge, uniform demand 100."""
    demand = np.full((3, 3), 100.0)
    np.fill_diagonal(demand, 0.0)
    return CityGraph.from_edges(
        [(0.0, 0.0), (900.0, 0.0), (1800.0, 0.0)],
        [(0, 1, 60.0), (1, 2, 60.0)],
        demand,
    )


@pytest.fixture
def line_city4():
    """0 - 1 - 2 - 3 chain, 60 s per edge."""
    demand = np.full((4, 4), 50.0)
    np.fill_diagonal(demand, 0.0)
    return CityGraph.from_edges(
        [(0.0, 0.0), (900.0, 0.0), (1800.0, 0.0), (2700.0, 0.0)],
        [(0, 1, 60.0), (1, 2, 60.0), (2, 3, 60.0)],
        demand,
    )


def random_connected_city(rng: np.random.Generator, n: int) -> CityGraph:
    """Random symmetric strongly connected city for oracle comparisons."""
    while True:
        positions = rng.uniform(0.0, 10_000.0, size=(n, 2))
        times = np.full((n, n), np.inf)
        for i in range(n):
            for j in range(i + 1, n):
                if rng.random() < 0.45:
                    tau = float(rng.uniform(30.0, 600.0))
                    times[i, j] = tau
                    times[j, i] = tau
        demand = np.zeros((n, n))
        upper = np.triu_indices(n, k=1)
        demand[upper] = rng.integers(0, 300, size=len(upper[0]))
        demand = demand + demand.T
        city = CityGraph(positions, times, demand)
        try:
            city.validate()
        except Exception:
            continue
        return city


def make_mdp(city, num_routes, min_stops, max_stops, alpha=0.5, **kw):
    sp = all_pairs_shortest_paths(city)
    weights = CostWeights.for_problem(sp, num_routes, alpha, **kw)
    return TransitMdp(city, sp, weights, num_routes, min_stops, max_stops)
