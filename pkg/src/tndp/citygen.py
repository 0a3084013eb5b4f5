"""Procedural generation of synthetic training cities.

Five street-network processes are supported: incoming/outgoing k-nearest-
neighbor graphs, Voronoi diagrams, and 4- or 8-connected grids.  Nodes live
in a square (30 km by default), edge drive times follow straight-line
distance at a fixed vehicle speed, and demand is sampled uniformly and
symmetrized.  Cities that come out disconnected are discarded and redrawn.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy.spatial import Voronoi

from .city import CityGraph
from .fileio import read_city_file, write_city_file

GENERATORS = ("incoming_knn", "outgoing_knn", "voronoi", "grid4", "grid8")


class GenerationError(RuntimeError):
    """Raised when no valid city is produced within the retry budget."""


@dataclass(frozen=True)
class GenConfig:
    num_nodes: int = 20
    side: float = 30_000.0  # meters
    vehicle_speed: float = 15.0  # m/s
    edge_drop_prob: float = 0.1
    generator: str = "random"  # one of GENERATORS, or "random"
    knn: int = 4
    demand_low: float = 60.0
    demand_high: float = 800.0
    max_attempts: int = 1000

    def __post_init__(self):
        if self.num_nodes < 2:
            raise ValueError("need at least 2 nodes")
        if not 0.0 <= self.edge_drop_prob < 1.0:
            raise ValueError("edge_drop_prob must be in [0, 1)")
        if self.generator != "random" and self.generator not in GENERATORS:
            raise ValueError(f"unknown generator {self.generator!r}")


def knn_edges(points: np.ndarray, k: int = 4, direction: str = "incoming") -> set[tuple[int, int]]:
    """Directed edges between each node and its k nearest neighbors.

    ``incoming`` adds edges from the neighbors to the node, ``outgoing``
    the reverse.  Distance ties are broken toward the lower node index.
    """
    if direction not in ("incoming", "outgoing"):
        raise ValueError("direction must be 'incoming' or 'outgoing'")
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    if n <= k:
        raise ValueError(f"need more than k={k} points")
    diffs = pts[:, None, :] - pts[None, :, :]
    dists = np.sqrt((diffs**2).sum(axis=-1))
    edges: set[tuple[int, int]] = set()
    index = np.arange(n)
    for i in range(n):
        order = np.lexsort((index, dists[i]))
        nearest = [j for j in order if j != i][:k]
        for j in nearest:
            edges.add((int(j), i) if direction == "incoming" else (i, int(j)))
    return edges


def grid_dims(n: int) -> tuple[int, int]:
    """Factor pair (rows, cols) with rows * cols == n, as square as possible."""
    best = (1, n)
    for rows in range(1, int(np.sqrt(n)) + 1):
        if n % rows == 0:
            best = (rows, n // rows)
    return best


def grid_layout(n: int, side: float) -> tuple[np.ndarray, int, int]:
    rows, cols = grid_dims(n)
    xs = np.linspace(0.0, side, cols) if cols > 1 else np.array([side / 2])
    ys = np.linspace(0.0, side, rows) if rows > 1 else np.array([side / 2])
    pos = np.array([(x, y) for y in ys for x in xs])
    return pos, rows, cols


def grid_edges(rows: int, cols: int, diagonals: bool) -> set[tuple[int, int]]:
    """Undirected lattice adjacencies as one canonical pair per edge."""
    edges = set()
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            steps = [(0, 1), (1, 0)]
            if diagonals:
                steps += [(1, 1), (1, -1)]
            for dr, dc in steps:
                rr, cc = r + dr, c + dc
                if 0 <= rr < rows and 0 <= cc < cols:
                    edges.add((i, rr * cols + cc))
    return edges


def voronoi_graph(
    points: np.ndarray, side: float
) -> tuple[np.ndarray, set[tuple[int, int]]]:
    """Nodes and edges shared between Voronoi cells, clipped to the square."""
    vor = Voronoi(points)
    clipped = np.clip(vor.vertices, 0.0, side)
    # clipping can merge vertices; remap coincident ones to a single node
    keys = [tuple(np.round(v, 6)) for v in clipped]
    remap: dict[tuple, int] = {}
    positions = []
    index_of = np.empty(len(clipped), dtype=int)
    for old, key in enumerate(keys):
        if key not in remap:
            remap[key] = len(positions)
            positions.append(clipped[old])
        index_of[old] = remap[key]
    edges = set()
    for a, b in vor.ridge_vertices:
        if a < 0 or b < 0:
            continue
        i, j = int(index_of[a]), int(index_of[b])
        if i != j:
            edges.add((min(i, j), max(i, j)))
    return np.asarray(positions), edges


def _undirected(edges: set[tuple[int, int]]) -> set[tuple[int, int]]:
    return {(min(i, j), max(i, j)) for i, j in edges}


def _drop_edges(
    edges: set[tuple[int, int]], prob: float, rng: np.random.Generator
) -> set[tuple[int, int]]:
    # one draw per undirected edge keeps the street graph symmetric
    if prob <= 0:
        return set(edges)
    return {e for e in sorted(edges) if rng.random() >= prob}


def _is_connected(n: int, edges: set[tuple[int, int]]) -> bool:
    if not edges:
        return n <= 1
    adj = [[] for _ in range(n)]
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = {0}
    stack = [0]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return len(seen) == n


def _sample_demand(n: int, config: GenConfig, rng: np.random.Generator) -> np.ndarray:
    demand = np.zeros((n, n))
    upper = np.triu_indices(n, k=1)
    demand[upper] = rng.uniform(config.demand_low, config.demand_high, size=len(upper[0]))
    return demand + demand.T


def _build_city(
    positions: np.ndarray,
    edges: set[tuple[int, int]],
    config: GenConfig,
    rng: np.random.Generator,
) -> CityGraph:
    n = len(positions)
    times = np.full((n, n), np.inf)
    for i, j in edges:
        tau = float(np.linalg.norm(positions[i] - positions[j])) / config.vehicle_speed
        times[i, j] = tau
        times[j, i] = tau
    city = CityGraph(positions, times, _sample_demand(n, config, rng))
    city.validate()
    return city


def voronoi_city(config: GenConfig, rng: np.random.Generator) -> CityGraph:
    """Voronoi-diagram city; the seed-point count is walked until the node
    count comes out exactly right."""
    n = config.num_nodes
    m = n
    for _ in range(config.max_attempts):
        m = max(m, 4)  # 2D Voronoi needs at least 4 seed points
        points = rng.uniform(0.0, config.side, size=(m, 2))
        positions, edges = voronoi_graph(points, config.side)
        count = len(positions)
        if count == n:
            if edges and _is_connected(n, edges):
                return _build_city(positions, edges, config, rng)
        elif count < n:
            m += 1
        else:
            m -= 1
    raise GenerationError(f"no valid voronoi city with n={n} after {config.max_attempts} tries")


def generate_city(config: GenConfig, rng: np.random.Generator) -> CityGraph:
    """Draw one synthetic city using the configured (or random) process."""
    for _ in range(config.max_attempts):
        name = config.generator
        if name == "random":
            name = GENERATORS[rng.integers(len(GENERATORS))]
        if name == "voronoi":
            return voronoi_city(config, rng)
        if name in ("incoming_knn", "outgoing_knn"):
            positions = rng.uniform(0.0, config.side, size=(config.num_nodes, 2))
            direction = "incoming" if name == "incoming_knn" else "outgoing"
            edges = _undirected(knn_edges(positions, config.knn, direction))
        else:
            positions, rows, cols = grid_layout(config.num_nodes, config.side)
            edges = grid_edges(rows, cols, diagonals=(name == "grid8"))
        edges = _drop_edges(edges, config.edge_drop_prob, rng)
        if edges and _is_connected(config.num_nodes, edges):
            return _build_city(positions, edges, config, rng)
    raise GenerationError(
        f"no connected city from generator {config.generator!r} "
        f"after {config.max_attempts} tries"
    )


def generate_dataset(
    config: GenConfig, count: int, seed: int
) -> tuple[list[CityGraph], list[dict]]:
    """Generate ``count`` cities with per-city seeded random streams."""
    cities = []
    metas = []
    for i in range(count):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        name = config.generator
        if name == "random":
            name = GENERATORS[rng.integers(len(GENERATORS))]
        one = GenConfig(**{**asdict(config), "generator": name})
        cities.append(generate_city(one, rng))
        metas.append({"index": i, "generator": name, "seed": seed})
    return cities, metas


def write_dataset(
    directory: str | Path, cities: list[CityGraph], metas: list[dict], config: GenConfig, seed: int
) -> None:
    """One city file per city plus a manifest with generator metadata."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (city, meta) in enumerate(zip(cities, metas)):
        name = f"city_{i:05d}.txt"
        write_city_file(directory / name, city)
        entries.append({"file": name, **meta})
    manifest = {"config": asdict(config), "seed": seed, "cities": entries}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def read_dataset(directory: str | Path) -> tuple[list[CityGraph], dict]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    cities = [read_city_file(directory / entry["file"]) for entry in manifest["cities"]]
    return cities, manifest
