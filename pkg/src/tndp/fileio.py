"""Text formats for cities, benchmark matrices, solutions, and run records.

Matrices are whitespace-separated rows, one row per line, with the token
``Inf`` marking absent street edges.  A synthetic-city file stacks three
sections (node positions, street travel times, demand), each introduced by
a ``# name`` header line.  Numbers are written with ``repr`` so files
round-trip losslessly.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .city import CityGraph

INF_TOKEN = "Inf"

CITY_SECTIONS = ("positions", "travel_times", "demand")


def _format_value(x: float) -> str:
    if np.isinf(x):
        return INF_TOKEN
    if float(x).is_integer():
        return str(int(x))
    return repr(float(x))


def format_matrix(matrix: np.ndarray) -> str:
    rows = [" ".join(_format_value(v) for v in row) for row in np.atleast_2d(matrix)]
    return "\n".join(rows) + "\n"


def parse_matrix(text: str, expect_square: bool = False) -> np.ndarray:
    """Parse a whitespace-separated matrix; rejects ragged rows."""
    rows = []
    width = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        values = []
        for token in line.split():
            if token.lower() in ("inf", "infinity"):
                values.append(np.inf)
            else:
                try:
                    values.append(float(token))
                except ValueError as exc:
                    raise ValueError(f"line {lineno}: bad number {token!r}") from exc
        if width is None:
            width = len(values)
        elif len(values) != width:
            raise ValueError(f"line {lineno}: expected {width} columns, got {len(values)}")
        rows.append(values)
    if not rows:
        raise ValueError("empty matrix")
    matrix = np.asarray(rows, dtype=float)
    if expect_square and matrix.shape[0] != matrix.shape[1]:
        raise ValueError(f"matrix is {matrix.shape[0]}x{matrix.shape[1]}, expected square")
    return matrix


def load_matrix(path: str | Path, expect_square: bool = False) -> np.ndarray:
    return parse_matrix(Path(path).read_text(), expect_square=expect_square)


def save_matrix(path: str | Path, matrix: np.ndarray) -> None:
    Path(path).write_text(format_matrix(matrix))


def write_city_file(path: str | Path, city: CityGraph) -> None:
    """Write one city as three labelled matrix sections."""
    times = np.where(np.isfinite(city.street_times), city.street_times, np.inf)
    parts = []
    for name, matrix in zip(
        CITY_SECTIONS, (city.node_positions, times, city.demand)
    ):
        parts.append(f"# {name}\n{format_matrix(matrix)}")
    Path(path).write_text("".join(parts))


def read_city_file(path: str | Path) -> CityGraph:
    text = Path(path).read_text()
    sections: dict[str, list[str]] = {}
    current = None
    for line in text.splitlines():
        stripped = line.strip()
        if stripped.startswith("#"):
            current = stripped.lstrip("#").strip()
            sections[current] = []
        elif stripped and current is not None:
            sections[current].append(line)
    missing = [s for s in CITY_SECTIONS if s not in sections]
    if missing:
        raise ValueError(f"{path}: missing sections {missing}")
    positions = parse_matrix("\n".join(sections["positions"]))
    times = parse_matrix("\n".join(sections["travel_times"]), expect_square=True)
    demand = parse_matrix("\n".join(sections["demand"]), expect_square=True)
    city = CityGraph(positions, times, demand)
    city.validate()
    return city


def write_solution(
    path: str | Path,
    routes: Sequence[Sequence[int]],
    breakdown,
    meta: dict | None = None,
) -> None:
    record = {
        "routes": [list(map(int, r)) for r in routes],
        "cost": {
            "total": breakdown.total,
            "passenger_cost": breakdown.passenger_cost,
            "operator_cost": breakdown.operator_cost,
            "constraint_cost": breakdown.constraint_cost,
            "unserved_fraction": breakdown.unserved_fraction,
        },
    }
    if meta:
        record["meta"] = meta
    Path(path).write_text(json.dumps(record, indent=2) + "\n")


def read_solution(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())


def append_jsonl(path: str | Path, record: dict) -> None:
    with open(path, "a") as fh:
        fh.write(json.dumps(record) + "\n")


def read_jsonl(path: str | Path) -> list[dict]:
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
