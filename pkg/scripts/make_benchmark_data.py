"""Write the bundled benchmark instance files under data/benchmarks/.

The 15-node Mandl instance is the classical Swiss public-transit benchmark,
reproduced here from the published travel-time and demand tables (20 street
links counted undirected).  The four Mumford instances are NOT
redistributable, so this script writes synthetic stand-ins that match the
published statistics exactly (node count, street-edge count, routes, stop
limits, area); use ``tndp bench fetch`` with a registry pointing at the
official files for true replication.

Run from the repository root:  python3 scripts/make_benchmark_data.py
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from tndp.bench import INSTANCES, instance_files, sha256_file
from tndp.fileio import save_matrix

OUT_DIR = Path(__file__).resolve().parents[1] / "data" / "benchmarks"

MANDL_EDGES_MINUTES = [
    (0, 1, 8), (1, 2, 2), (1, 3, 3), (1, 4, 6), (2, 5, 3),
    (3, 4, 4), (3, 5, 4), (3, 11, 10), (5, 7, 2), (5, 14, 3),
    (6, 9, 2), (6, 14, 7), (7, 14, 2), (8, 14, 8), (9, 10, 3),
    (9, 12, 10), (9, 13, 10), (10, 11, 3), (10, 12, 5), (12, 13, 2),
]

MANDL_DEMAND = [
    [0, 400, 200, 60, 80, 150, 75, 75, 30, 160, 30, 25, 35, 0, 0],
    [400, 0, 50, 120, 20, 180, 90, 90, 15, 130, 20, 10, 10, 5, 0],
    [200, 50, 0, 40, 60, 180, 90, 90, 15, 45, 20, 10, 10, 5, 0],
    [60, 120, 40, 0, 50, 100, 50, 50, 15, 240, 40, 25, 10, 5, 0],
    [80, 20, 60, 50, 0, 50, 25, 25, 10, 120, 20, 15, 5, 0, 0],
    [150, 180, 180, 100, 50, 0, 100, 100, 30, 880, 60, 15, 15, 10, 0],
    [75, 90, 90, 50, 25, 100, 0, 50, 15, 440, 35, 10, 10, 5, 0],
    [75, 90, 90, 50, 25, 100, 50, 0, 15, 440, 35, 10, 10, 5, 0],
    [30, 15, 15, 15, 10, 30, 15, 15, 0, 140, 20, 5, 0, 0, 0],
    [160, 130, 45, 240, 120, 880, 440, 440, 140, 0, 600, 250, 500, 200, 0],
    [30, 20, 20, 40, 20, 60, 35, 35, 20, 600, 0, 75, 95, 15, 0],
    [25, 10, 10, 25, 15, 15, 10, 10, 5, 250, 75, 0, 70, 0, 0],
    [35, 10, 10, 10, 5, 15, 10, 10, 0, 500, 95, 70, 0, 45, 0],
    [0, 5, 5, 5, 0, 10, 5, 5, 0, 200, 15, 0, 45, 0, 0],
    [0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0],
]


def mandl_matrices() -> tuple[np.ndarray, np.ndarray]:
    n = 15
    times = np.full((n, n), np.inf)
    np.fill_diagonal(times, 0.0)
    for i, j, tau in MANDL_EDGES_MINUTES:
        times[i, j] = tau
        times[j, i] = tau
    return times, np.asarray(MANDL_DEMAND, dtype=float)


def _connected(n: int, edges: set[tuple[int, int]]) -> bool:
    adj = [[] for _ in range(n)]
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    seen, stack = {0}, [0]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return len(seen) == n


def standin_matrices(
    n: int, target_edges: int, area_km2: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Random geometric street network with an exact undirected edge count."""
    rng = np.random.default_rng(seed)
    side = np.sqrt(area_km2) * 1000.0  # meters
    points = rng.uniform(0.0, side, size=(n, 2))
    diffs = points[:, None, :] - points[None, :, :]
    dist = np.sqrt((diffs**2).sum(-1))

    order = np.argsort(dist, axis=1)
    edges: set[tuple[int, int]] = set()
    for i in range(n):
        for j in order[i, 1:5]:  # symmetrized 4-nearest-neighbor seed graph
            edges.add((min(i, int(j)), max(i, int(j))))

    all_pairs = sorted(
        ((i, j) for i in range(n) for j in range(i + 1, n)),
        key=lambda p: dist[p],
    )
    while len(edges) < target_edges:  # grow with the shortest missing links
        for pair in all_pairs:
            if pair not in edges:
                edges.add(pair)
                break
    if len(edges) > target_edges:  # shrink from the longest removable links
        by_length = sorted(edges, key=lambda p: -dist[p])
        for pair in by_length:
            if len(edges) == target_edges:
                break
            trial = edges - {pair}
            if _connected(n, trial):
                edges = trial
    assert len(edges) == target_edges and _connected(n, edges)

    times = np.full((n, n), np.inf)
    np.fill_diagonal(times, 0.0)
    for i, j in edges:
        minutes = round(dist[i, j] / 15.0 / 60.0, 4)
        times[i, j] = minutes
        times[j, i] = minutes

    demand = np.zeros((n, n))
    upper = np.triu_indices(n, k=1)
    demand[upper] = rng.integers(60, 801, size=len(upper[0]))
    demand = demand + demand.T
    return times, demand


def main() -> None:
    OUT_DIR.mkdir(parents=True, exist_ok=True)
    registry = {}
    for name, spec in INSTANCES.items():
        if name == "mandl":
            times, demand = mandl_matrices()
        else:
            times, demand = standin_matrices(
                spec.nodes, spec.street_edges, spec.area_km2, seed=hash_seed(name)
            )
        tt_path, dem_path = instance_files(name, OUT_DIR)
        save_matrix(tt_path, times)
        save_matrix(dem_path, demand)
        registry[name] = {
            "travel_times": {
                "file": tt_path.name,
                "url": None,
                "sha256": sha256_file(tt_path),
            },
            "demand": {
                "file": dem_path.name,
                "url": None,
                "sha256": sha256_file(dem_path),
            },
            "standin": name != "mandl",
        }
        print(f"{name}: {tt_path.name}, {dem_path.name}")
    (OUT_DIR / "registry.json").write_text(json.dumps(registry, indent=2) + "\n")
    print(f"registry -> {OUT_DIR / 'registry.json'}")


def hash_seed(name: str) -> int:
    return sum(ord(c) * 31**k for k, c in enumerate(name)) % (2**31)


if __name__ == "__main__":
    main()
