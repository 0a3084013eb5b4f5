"""Benchmark ingestion and the experiment harness.

Instances come as two whitespace matrices (drive times with ``Inf`` for
absent streets, and demand), plus published solver parameters.  The five
standard instances and their expected statistics are registered here and
checked at load time.  The harness runs (instance x method x alpha x seed)
grids, records one JSON line per run, and aggregates means / deviations and
passenger-vs-operator trade-off tables.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .city import CityGraph, all_pairs_shortest_paths, validate_network
from .costs import CostWeights
from .fileio import append_jsonl, load_matrix, save_matrix
from .mdp import TransitMdp

logger = logging.getLogger(__name__)

DATA_DIR_ENV = "TNDP_DATA_DIR"
VEHICLE_SPEED = 15.0  # m/s; used when inferring coordinates from drive times


@dataclass(frozen=True)
class InstanceSpec:
    name: str
    nodes: int
    street_edges: int  # undirected count
    num_routes: int
    min_stops: int
    max_stops: int
    area_km2: float


BENCHMARKS = {
    spec.name: spec
    for spec in (
        InstanceSpec("mandl", 15, 20, 6, 2, 8, 352.7),
        InstanceSpec("mumford0", 30, 90, 12, 2, 15, 354.2),
        InstanceSpec("mumford1", 70, 210, 15, 10, 30, 858.5),
        InstanceSpec("mumford2", 110, 385, 56, 10, 22, 1394.3),
        InstanceSpec("mumford3", 127, 425, 60, 12, 25, 1703.2),
    )
}

# tiny bundled instance for tests and demos; not part of the published set
MINI = InstanceSpec("mini", 5, 6, 2, 2, 4, 36.0)

INSTANCES = {**BENCHMARKS, MINI.name: MINI}


@dataclass(frozen=True)
class BenchmarkInstance:
    name: str
    city: CityGraph
    num_routes: int
    min_stops: int
    max_stops: int
    area_km2: float
    # raw file matrices (file units) so serialization round-trips exactly
    file_travel_times: np.ndarray = field(repr=False, default=None)
    file_demand: np.ndarray = field(repr=False, default=None)


class InstanceError(ValueError):
    """Raised when an instance file disagrees with its registered statistics."""


def positions_from_times(times: np.ndarray, area_km2: float) -> np.ndarray:
    """Plant nodes in the plane from drive times by classical scaling.

    The instance files carry no coordinates, but the planner's features
    need them; a metric embedding of shortest-path distances is a faithful
    stand-in.  The layout is scaled so its bounding box matches the stated
    instance area.
    """
    dist = times * VEHICLE_SPEED
    sq = dist**2
    n = sq.shape[0]
    centering = np.eye(n) - np.full((n, n), 1.0 / n)
    gram = -0.5 * centering @ sq @ centering
    eigvals, eigvecs = np.linalg.eigh(gram)
    top = np.argsort(eigvals)[::-1][:2]
    coords = eigvecs[:, top] * np.sqrt(np.maximum(eigvals[top], 0.0))
    # deterministic signs: make the largest-magnitude entry of each axis positive
    for axis in range(coords.shape[1]):
        pivot = np.argmax(np.abs(coords[:, axis]))
        if coords[pivot, axis] < 0:
            coords[:, axis] = -coords[:, axis]
    coords -= coords.min(axis=0)
    spans = np.maximum(coords.max(axis=0), 1e-9)
    target = np.sqrt(area_km2 * 1e6 / (spans[0] * spans[1]))
    return coords * target


def load_instance(
    travel_time_file: str | Path,
    demand_file: str | Path,
    spec: InstanceSpec,
    time_unit: str = "minutes",
) -> BenchmarkInstance:
    """Parse and validate one benchmark instance against its statistics."""
    raw_times = load_matrix(travel_time_file, expect_square=True)
    raw_demand = load_matrix(demand_file, expect_square=True)
    n = raw_times.shape[0]
    if n != spec.nodes:
        raise InstanceError(f"{spec.name}: expected {spec.nodes} nodes, file has {n}")
    if raw_demand.shape[0] != n:
        raise InstanceError(
            f"{spec.name}: demand is {raw_demand.shape[0]}x{raw_demand.shape[0]}, "
            f"travel times are {n}x{n}"
        )

    times = raw_times.copy()
    np.fill_diagonal(times, np.inf)  # a zero diagonal in files is not an edge
    finite = np.isfinite(times)
    if not np.array_equal(finite, finite.T):
        raise InstanceError(f"{spec.name}: street edges are not symmetric")
    undirected = int(finite.sum()) // 2
    if undirected != spec.street_edges:
        raise InstanceError(
            f"{spec.name}: expected {spec.street_edges} street edges, found {undirected}"
        )

    demand = raw_demand.copy()
    if not np.allclose(demand, demand.T):
        logger.warning("%s: demand matrix is asymmetric; averaging with its transpose", spec.name)
        demand = (demand + demand.T) / 2.0
    np.fill_diagonal(demand, 0.0)

    scale = {"minutes": 60.0, "seconds": 1.0}[time_unit]
    seconds = np.where(finite, times * scale, np.inf)
    positions = positions_from_times(
        _shortest_times(seconds), spec.area_km2
    )
    city = CityGraph(positions, seconds, demand)
    city.validate()
    return BenchmarkInstance(
        name=spec.name,
        city=city,
        num_routes=spec.num_routes,
        min_stops=spec.min_stops,
        max_stops=spec.max_stops,
        area_km2=spec.area_km2,
        file_travel_times=raw_times,
        file_demand=raw_demand,
    )


def _shortest_times(seconds: np.ndarray) -> np.ndarray:
    from scipy.sparse import csr_matrix
    from scipy.sparse.csgraph import dijkstra

    finite = np.isfinite(seconds)
    graph = csr_matrix((seconds[finite], np.nonzero(finite)), shape=seconds.shape)
    return dijkstra(graph, directed=True)


def save_instance(
    instance: BenchmarkInstance, travel_time_file: str | Path, demand_file: str | Path
) -> None:
    save_matrix(travel_time_file, instance.file_travel_times)
    save_matrix(demand_file, instance.file_demand)


def data_dir(override: str | Path | None = None) -> Path:
    if override is not None:
        return Path(override)
    env = os.environ.get(DATA_DIR_ENV)
    if env:
        return Path(env)
    return Path("data") / "benchmarks"


def instance_files(name: str, directory: Path) -> tuple[Path, Path]:
    return directory / f"{name}_travel_times.txt", directory / f"{name}_demand.txt"


def load_benchmark(name: str, directory: str | Path | None = None) -> BenchmarkInstance:
    spec = INSTANCES[name]
    tt, dem = instance_files(name, data_dir(directory))
    return load_instance(tt, dem, spec)


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    digest.update(path.read_bytes())
    return digest.hexdigest()


def fetch(
    registry_file: str | Path,
    directory: str | Path | None = None,
    names: list[str] | None = None,
) -> list[str]:
    """Download (or verify) instance files listed in a registry.

    Registry entries map instance names to per-file records with ``url``
    and optional ``sha256``.  Files already present and matching their
    checksum are left alone.  Returns the list of instances ready for use.
    """
    import urllib.request

    registry = json.loads(Path(registry_file).read_text())
    target = data_dir(directory)
    target.mkdir(parents=True, exist_ok=True)
    ready = []
    for name, files in registry.items():
        if names and name not in names:
            continue
        ok = True
        for kind in ("travel_times", "demand"):
            record = files[kind]
            dest = target / record["file"]
            if not dest.exists():
                url = record.get("url")
                if not url:
                    logger.warning("%s: %s missing and no url given", name, dest)
                    ok = False
                    continue
                logger.info("fetching %s -> %s", url, dest)
                urllib.request.urlretrieve(url, dest)
            expected = record.get("sha256")
            if expected:
                actual = sha256_file(dest)
                if actual != expected:
                    raise InstanceError(
                        f"{name}: checksum mismatch for {dest} "
                        f"(expected {expected}, got {actual})"
                    )
        if ok:
            ready.append(name)
    return ready


# -- experiment suite -------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentResult:
    instance: str
    method: str
    alpha: float
    seed: int
    total: float
    passenger_cost: float
    operator_cost: float
    constraint_cost: float
    unserved_fraction: float
    feasible: bool
    wall_time: float
    routes: tuple

    def to_record(self) -> dict:
        return {
            "instance": self.instance,
            "method": self.method,
            "alpha": self.alpha,
            "seed": self.seed,
            "total": self.total,
            "passenger_cost": self.passenger_cost,
            "operator_cost": self.operator_cost,
            "constraint_cost": self.constraint_cost,
            "unserved_fraction": self.unserved_fraction,
            "feasible": self.feasible,
            "wall_time": self.wall_time,
            "routes": [list(r) for r in self.routes],
        }


def run_single(
    instance: BenchmarkInstance,
    method: dict,
    alpha: float,
    seed: int,
) -> ExperimentResult:
    """One run; ``method`` is a dict like {"name": "bco", ...options}."""
    from .bco import BcoConfig, run_bco

    sp = all_pairs_shortest_paths(instance.city)
    weights = CostWeights.for_problem(
        sp,
        instance.num_routes,
        alpha,
        beta=method.get("beta", 5.0),
        transfer_penalty=method.get("transfer_penalty", 300.0),
    )
    mdp = TransitMdp(
        instance.city, sp, weights, instance.num_routes, instance.min_stops, instance.max_stops
    )
    name = method["name"]
    # stable per-method stream (the builtin str hash is process-randomized)
    method_tag = int.from_bytes(hashlib.sha256(name.encode()).digest()[:4], "big")
    rng = np.random.default_rng(np.random.SeedSequence([seed, method_tag]))
    start = time.perf_counter()
    if name in ("bco", "nbco", "no2nb"):
        mix = {"bco": "classic", "nbco": "neural", "no2nb": "neural_only"}[name]
        config = BcoConfig(
            num_bees=method.get("num_bees", 10),
            modifications_per_pass=method.get("modifications_per_pass", 2),
            passes_per_iteration=method.get("passes_per_iteration", 5),
            iterations=method.get("iterations", 400),
            bee_mix=mix,
        )
        model = _load_model(method) if mix != "classic" else None
        outcome = run_bco(mdp, config, rng, model=model)
        routes, breakdown = outcome.best_routes, outcome.best_cost
    elif name == "lp":
        from .planner import plan_best_of_k

        model = _load_model(method)
        best = plan_best_of_k(model, mdp, method.get("samples", 100), rng)
        routes, breakdown = best.best.routes, best.best.cost
    else:
        raise ValueError(f"unknown method {name!r}")
    elapsed = time.perf_counter() - start

    report = validate_network(
        routes, instance.city, instance.num_routes, instance.min_stops, instance.max_stops
    )
    return ExperimentResult(
        instance=instance.name,
        method=method.get("label", name),
        alpha=alpha,
        seed=seed,
        total=breakdown.total,
        passenger_cost=breakdown.passenger_cost,
        operator_cost=breakdown.operator_cost,
        constraint_cost=breakdown.constraint_cost,
        unserved_fraction=breakdown.unserved_fraction,
        feasible=report.all_ok,
        wall_time=elapsed,
        routes=tuple(tuple(r) for r in routes),
    )


def _load_model(method: dict):
    from .policy import PolicyModel

    checkpoint = method.get("checkpoint")
    if not checkpoint:
        raise ValueError(f"method {method['name']!r} needs a checkpoint")
    return PolicyModel.load(checkpoint)


def run_suite(
    instances: list[BenchmarkInstance],
    methods: list[dict],
    alphas: list[float],
    seeds: list[int],
    out_file: str | Path | None = None,
) -> list[ExperimentResult]:
    """Cartesian product of runs; failures are recorded and skipped."""
    results = []
    for instance in instances:
        for method in methods:
            method_alphas = method.get("alphas", alphas)
            for alpha in method_alphas:
                for seed in seeds:
                    try:
                        result = run_single(instance, method, alpha, seed)
                    except Exception:
                        logger.exception(
                            "run failed: %s %s alpha=%s seed=%s",
                            instance.name, method.get("label", method["name"]), alpha, seed,
                        )
                        continue
                    results.append(result)
                    if out_file is not None:
                        append_jsonl(out_file, result.to_record())
    return results


def aggregate(records: list[dict]) -> list[dict]:
    """Mean and relative standard deviation per (instance, method, alpha)."""
    groups: dict[tuple, list[dict]] = {}
    for rec in records:
        groups.setdefault((rec["instance"], rec["method"], rec["alpha"]), []).append(rec)
    rows = []
    for (instance, method, alpha), group in sorted(groups.items()):
        totals = np.array([g["total"] for g in group])
        mean = float(totals.mean())
        std = float(totals.std(ddof=1)) if len(totals) > 1 else 0.0
        rows.append(
            {
                "instance": instance,
                "method": method,
                "alpha": alpha,
                "seeds": len(group),
                "mean_total": mean,
                "std_pct": 100.0 * std / mean if mean else 0.0,
                "violations": sum(0 if g["feasible"] else 1 for g in group),
            }
        )
    return rows


def write_aggregate_csv(rows: list[dict], path: str | Path) -> None:
    header = ["instance", "method", "alpha", "seeds", "mean_total", "std_pct", "violations"]
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(str(row[key]) for key in header))
    Path(path).write_text("\n".join(lines) + "\n")


def pareto_rows(records: list[dict]) -> list[dict]:
    """Mean passenger/operator cost in minutes per (instance, method, alpha),
    ordered by alpha so adjacent rows trace one trade-off curve."""
    groups: dict[tuple, list[dict]] = {}
    for rec in records:
        groups.setdefault((rec["instance"], rec["method"], rec["alpha"]), []).append(rec)
    rows = []
    for (instance, method, alpha), group in sorted(groups.items()):
        rows.append(
            {
                "instance": instance,
                "method": method,
                "alpha": alpha,
                "mean_passenger_minutes": float(
                    np.mean([g["passenger_cost"] for g in group]) / 60.0
                ),
                "mean_operator_minutes": float(
                    np.mean([g["operator_cost"] for g in group]) / 60.0
                ),
            }
        )
    return rows


def write_pareto_csv(rows: list[dict], path: str | Path) -> None:
    header = ["instance", "method", "alpha", "mean_passenger_minutes", "mean_operator_minutes"]
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(str(row[key]) for key in header))
    Path(path).write_text("\n".join(lines) + "\n")
