import numpy as np
import pytest
import torch

from tndp.city import all_pairs_shortest_paths
from tndp.planner import plan_best_of_k, plan_single, run_batch
from tndp.policy import FeatureScaler, ModelConfig, PolicyModel

from conftest import make_mdp, random_connected_city

TINY = ModelConfig(
    embed_dim=16,
    num_layers=2,
    num_heads=2,
    edge_embed_dim=8,
    head_hidden=16,
    baseline_hidden=16,
    max_candidates=20,
)


@pytest.fixture
def setup():
    rng = np.random.default_rng(41)
    city = random_connected_city(rng, 7)
    mdp = make_mdp(city, 3, 2, 5, alpha=0.5)
    scaler = FeatureScaler.fit([city], [mdp.sp_data], 3)
    model = PolicyModel.new(TINY, scaler, seed=4)
    return model, mdp


class TestRunBatch:
    def test_every_lane_satisfies_constraints(self, setup):
        model, mdp = setup
        results = run_batch(model, [(mdp, ())] * 16, np.random.default_rng(0))
        assert len(results) == 16
        for result in results:
            assert len(result.routes) == 3
            for route in result.routes:
                assert 1 <= len(route) <= 5
                assert len(set(route)) == len(route)

    def test_costs_match_reevaluation(self, setup):
        model, mdp = setup
        results = run_batch(model, [(mdp, ())] * 8, np.random.default_rng(1))
        for result in results:
            again = mdp.evaluate(result.routes)
            assert result.cost.total == pytest.approx(again.total, abs=1e-12)
            assert result.reward == pytest.approx(-again.total, abs=1e-12)

    def test_partial_networks_complete_one_route(self, setup):
        model, mdp = setup
        seed = ((0, 1), (2, 3))
        seed = tuple(
            p for p in mdp.paths if len(p) == 2
        )[:2]
        results = run_batch(model, [(mdp, seed)] * 4, np.random.default_rng(2))
        for result in results:
            assert len(result.routes) == 3
            assert result.routes[:2] == seed

    def test_mixed_city_sizes_rejected(self, setup):
        model, mdp = setup
        rng = np.random.default_rng(5)
        other = make_mdp(random_connected_city(rng, 6), 2, 2, 4)
        with pytest.raises(ValueError, match="same node count"):
            run_batch(model, [(mdp, ()), (other, ())], rng)

    def test_deterministic_given_seed(self, setup):
        model, mdp = setup
        a = run_batch(model, [(mdp, ())] * 6, np.random.default_rng(9))
        b = run_batch(model, [(mdp, ())] * 6, np.random.default_rng(9))
        assert [r.routes for r in a] == [r.routes for r in b]

    def test_greedy_lanes_agree_with_single_greedy(self, setup):
        model, mdp = setup
        batched = run_batch(model, [(mdp, ())] * 3, np.random.default_rng(0), greedy=True)
        single = plan_single(model, mdp, np.random.default_rng(1), greedy=True)
        assert all(r.routes == single.routes for r in batched)


class TestPlanSingle:
    def test_produces_valid_network(self, setup):
        model, mdp = setup
        result = plan_single(model, mdp, np.random.default_rng(3))
        assert len(result.routes) == 3
        assert result.cost.total == pytest.approx(mdp.evaluate(result.routes).total)

    def test_greedy_is_deterministic(self, setup):
        model, mdp = setup
        a = plan_single(model, mdp, np.random.default_rng(1), greedy=True)
        b = plan_single(model, mdp, np.random.default_rng(2), greedy=True)
        assert a.routes == b.routes


class TestPlanBestOfK:
    def test_single_sample(self, setup):
        model, mdp = setup
        out = plan_best_of_k(model, mdp, 1, np.random.default_rng(0))
        assert out.samples == 1
        assert out.best.cost.total == pytest.approx(
            mdp.evaluate(out.best.routes).total
        )

    def test_nested_threshold_monotonicity(self, setup):
        model, mdp = setup
        out = plan_best_of_k(
            model, mdp, 60, np.random.default_rng(1), thresholds=(5, 20, 60)
        )
        assert out.cost_at[5] >= out.cost_at[20] >= out.cost_at[60]
        assert out.cost_at[60] == out.best.cost.total

    def test_chunking_covers_exact_sample_count(self, setup):
        model, mdp = setup
        out = plan_best_of_k(model, mdp, 23, np.random.default_rng(2), batch_lanes=7)
        assert out.samples == 23

    def test_best_is_minimum_of_samples(self, setup):
        model, mdp = setup
        rng = np.random.default_rng(7)
        out = plan_best_of_k(model, mdp, 30, rng, batch_lanes=30)
        rng2 = np.random.default_rng(7)
        raw = run_batch(model, [(mdp, ())] * 30, rng2)
        assert out.best.cost.total == pytest.approx(
            min(r.cost.total for r in raw), abs=1e-12
        )

    def test_invalid_k_rejected(self, setup):
        model, mdp = setup
        with pytest.raises(ValueError):
            plan_best_of_k(model, mdp, 0, np.random.default_rng(0))


class TestDoublePrecisionCompatibility:
    def test_run_batch_with_double_model(self, setup):
        model, mdp = setup
        model.net.double()
        results = run_batch(model, [(mdp, ())] * 2, np.random.default_rng(0))
        assert all(len(r.routes) == 3 for r in results)
