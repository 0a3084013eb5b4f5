import json
import logging
from pathlib import Path

import numpy as np
import pytest

from tndp.bench import (
    BENCHMARKS,
    InstanceError,
    InstanceSpec,
    MINI,
    aggregate,
    fetch,
    instance_files,
    load_benchmark,
    load_instance,
    pareto_rows,
    positions_from_times,
    run_single,
    run_suite,
    save_instance,
    sha256_file,
    write_aggregate_csv,
    write_pareto_csv,
)
from tndp.costs import CostWeights, total_cost
from tndp.city import all_pairs_shortest_paths

from conftest import DATA_DIR


class TestLoadInstances:
    @pytest.mark.parametrize("name", sorted(BENCHMARKS))
    def test_published_statistics(self, name):
        spec = BENCHMARKS[name]
        instance = load_benchmark(name, DATA_DIR)
        city = instance.city
        assert city.num_nodes == spec.nodes
        assert int(np.isfinite(city.street_times).sum()) // 2 == spec.street_edges
        assert instance.num_routes == spec.num_routes
        assert instance.min_stops == spec.min_stops
        assert instance.max_stops == spec.max_stops
        assert instance.area_km2 == spec.area_km2
        city.validate()

    def test_times_are_minutes_converted_to_seconds(self):
        instance = load_benchmark("mandl", DATA_DIR)
        finite = np.isfinite(instance.city.street_times)
        minutes = instance.city.street_times[finite] / 60.0
        assert np.allclose(minutes, np.round(minutes))
        assert minutes.min() >= 1.0

    def test_round_trip_is_lossless(self, tmp_path):
        for name in BENCHMARKS:
            instance = load_benchmark(name, DATA_DIR)
            tt, dem = instance_files(name, tmp_path)
            save_instance(instance, tt, dem)
            again = load_instance(tt, dem, BENCHMARKS[name])
            assert (again.file_travel_times == instance.file_travel_times).all()
            assert (again.file_demand == instance.file_demand).all()
            assert (again.city.street_times == instance.city.street_times).all()

    def test_wrong_edge_count_rejected(self, tmp_path):
        instance = load_benchmark("mini", DATA_DIR)
        tt, dem = instance_files("mini", tmp_path)
        save_instance(instance, tt, dem)
        wrong = InstanceSpec("mini", 5, 7, 2, 2, 4, 36.0)
        with pytest.raises(InstanceError, match="street edges"):
            load_instance(tt, dem, wrong)

    def test_wrong_node_count_rejected(self, tmp_path):
        instance = load_benchmark("mini", DATA_DIR)
        tt, dem = instance_files("mini", tmp_path)
        save_instance(instance, tt, dem)
        wrong = InstanceSpec("mini", 6, 6, 2, 2, 4, 36.0)
        with pytest.raises(InstanceError, match="nodes"):
            load_instance(tt, dem, wrong)

    def test_malformed_row_names_line(self, tmp_path):
        tt = tmp_path / "bad_tt.txt"
        tt.write_text("0 1\n1\n")
        dem = tmp_path / "bad_dem.txt"
        dem.write_text("0 1\n1 0\n")
        with pytest.raises(ValueError, match="line 2"):
            load_instance(tt, dem, InstanceSpec("bad", 2, 1, 1, 2, 2, 1.0))

    def test_asymmetric_demand_symmetrized_with_warning(self, tmp_path, caplog):
        instance = load_benchmark("mini", DATA_DIR)
        tt, dem = instance_files("mini", tmp_path)
        save_instance(instance, tt, dem)
        matrix = instance.file_demand.copy()
        matrix[0, 1] += 10.0
        from tndp.fileio import save_matrix

        save_matrix(dem, matrix)
        with caplog.at_level(logging.WARNING):
            loaded = load_instance(tt, dem, MINI)
        assert "asymmetric" in caplog.text
        assert loaded.city.demand[0, 1] == loaded.city.demand[1, 0]

    def test_positions_embedding_properties(self):
        instance = load_benchmark("mandl", DATA_DIR)
        pos = instance.city.node_positions
        spans = pos.max(axis=0) - pos.min(axis=0)
        area = spans[0] * spans[1] / 1e6
        assert area == pytest.approx(BENCHMARKS["mandl"].area_km2, rel=1e-6)
        # deterministic embedding
        sp = all_pairs_shortest_paths(instance.city)
        again = positions_from_times(sp.times, BENCHMARKS["mandl"].area_km2)
        np.testing.assert_allclose(again, pos, atol=1e-6)


class TestFetch:
    def test_verifies_bundled_checksums(self, tmp_path):
        registry = json.loads(Path(DATA_DIR, "registry.json").read_text())
        ready = fetch(Path(DATA_DIR) / "registry.json", DATA_DIR, names=["mini"])
        assert ready == ["mini"]

    def test_checksum_mismatch_raises(self, tmp_path):
        instance = load_benchmark("mini", DATA_DIR)
        tt, dem = instance_files("mini", tmp_path)
        save_instance(instance, tt, dem)
        registry = {
            "mini": {
                "travel_times": {"file": tt.name, "sha256": "0" * 64},
                "demand": {"file": dem.name, "sha256": sha256_file(dem)},
            }
        }
        reg_path = tmp_path / "registry.json"
        reg_path.write_text(json.dumps(registry))
        with pytest.raises(InstanceError, match="checksum"):
            fetch(reg_path, tmp_path)

    def test_missing_file_without_url_skipped(self, tmp_path, caplog):
        registry = {
            "ghost": {
                "travel_times": {"file": "ghost_tt.txt", "url": None},
                "demand": {"file": "ghost_dem.txt", "url": None},
            }
        }
        reg_path = tmp_path / "registry.json"
        reg_path.write_text(json.dumps(registry))
        with caplog.at_level(logging.WARNING):
            ready = fetch(reg_path, tmp_path)
        assert ready == []


class TestSuite:
    def _mini(self):
        return load_benchmark("mini", DATA_DIR)

    def test_two_seed_suite_produces_two_records(self, tmp_path):
        out = tmp_path / "runs.jsonl"
        results = run_suite(
            [self._mini()],
            [{"name": "bco", "iterations": 2}],
            alphas=[0.5],
            seeds=[0, 1],
            out_file=out,
        )
        assert len(results) == 2
        from tndp.fileio import read_jsonl

        records = read_jsonl(out)
        assert len(records) == 2
        assert {r["seed"] for r in records} == {0, 1}

    def test_total_recomputable_from_stored_routes(self):
        instance = self._mini()
        result = run_single(instance, {"name": "bco", "iterations": 2}, 0.5, 3)
        sp = all_pairs_shortest_paths(instance.city)
        weights = CostWeights.for_problem(sp, instance.num_routes, 0.5)
        again = total_cost(
            result.routes,
            instance.city,
            weights,
            instance.num_routes,
            instance.min_stops,
            instance.max_stops,
        )
        assert result.total == pytest.approx(again.total, abs=1e-9)

    def test_identical_seeds_identical_records(self):
        instance = self._mini()
        a = run_single(instance, {"name": "bco", "iterations": 2}, 0.5, 7)
        b = run_single(instance, {"name": "bco", "iterations": 2}, 0.5, 7)
        skip = {"wall_time"}  # measured, not derived from the seed
        a_rec = {k: v for k, v in a.to_record().items() if k not in skip}
        b_rec = {k: v for k, v in b.to_record().items() if k not in skip}
        assert a_rec == b_rec

    def test_failed_runs_are_skipped(self, caplog):
        with caplog.at_level(logging.ERROR):
            results = run_suite(
                [self._mini()],
                [{"name": "lp"}],  # no checkpoint -> fails
                alphas=[0.5],
                seeds=[0],
            )
        assert results == []
        assert "run failed" in caplog.text

    def test_method_alpha_restriction(self):
        results = run_suite(
            [self._mini()],
            [{"name": "bco", "iterations": 1, "alphas": [0.0, 1.0]}],
            alphas=[0.0, 0.5, 1.0],
            seeds=[0],
        )
        assert sorted({r.alpha for r in results}) == [0.0, 1.0]


class TestAggregation:
    def _records(self):
        return [
            {
                "instance": "mini",
                "method": "bco",
                "alpha": alpha,
                "seed": seed,
                "total": total,
                "passenger_cost": 120.0,
                "operator_cost": 600.0,
                "feasible": True,
            }
            for alpha, seed, total in [
                (0.5, 0, 0.4),
                (0.5, 1, 0.6),
                (0.0, 0, 0.3),
            ]
        ]

    def test_mean_and_relative_std(self):
        rows = aggregate(self._records())
        row = next(r for r in rows if r["alpha"] == 0.5)
        assert row["mean_total"] == pytest.approx(0.5)
        std = np.std([0.4, 0.6], ddof=1)
        assert row["std_pct"] == pytest.approx(100 * std / 0.5)
        assert row["seeds"] == 2

    def test_pareto_rows_in_alpha_order_and_minutes(self):
        rows = pareto_rows(self._records())
        assert [r["alpha"] for r in rows] == [0.0, 0.5]
        assert rows[0]["mean_passenger_minutes"] == pytest.approx(2.0)
        assert rows[0]["mean_operator_minutes"] == pytest.approx(10.0)

    def test_csv_writers(self, tmp_path):
        rows = aggregate(self._records())
        agg_path = tmp_path / "agg.csv"
        write_aggregate_csv(rows, agg_path)
        lines = agg_path.read_text().strip().splitlines()
        assert lines[0].startswith("instance,method,alpha")
        assert len(lines) == 1 + len(rows)

        pareto_path = tmp_path / "pareto.csv"
        write_pareto_csv(pareto_rows(self._records()), pareto_path)
        assert len(pareto_path.read_text().strip().splitlines()) == 3
