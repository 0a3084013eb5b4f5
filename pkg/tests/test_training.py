import numpy as np
import pytest
import torch

from tndp.city import all_pairs_shortest_paths
from tndp.citygen import GenConfig, generate_dataset
from tndp.policy import ModelConfig, PolicyModel
from tndp.training import (
    Augmentation,
    TrainConfig,
    TrainingError,
    apply_augmentation,
    draw_augmentation,
    episode_terms,
    evaluate_policy,
    train,
    validation_cost,
)

from conftest import make_mdp, random_connected_city

SMALL_MODEL = ModelConfig(
    embed_dim=16,
    num_layers=2,
    num_heads=2,
    edge_embed_dim=8,
    head_hidden=16,
    baseline_hidden=16,
    max_candidates=20,
)


def small_config(**overrides):
    base = dict(
        dataset_size=12,
        num_nodes=8,
        epochs=2,
        batch_size=4,
        num_routes=3,
        min_stops=2,
        max_stops=5,
        policy_lr=1e-3,
        baseline_lr=3e-3,
        seed=5,
        model=SMALL_MODEL,
    )
    base.update(overrides)
    return TrainConfig(**base)


def small_cities(config):
    cities, _ = generate_dataset(
        GenConfig(num_nodes=config.num_nodes), config.dataset_size, config.seed
    )
    return cities


class TestAugmentation:
    def test_identity_preserves_city(self, line_city):
        out = apply_augmentation(line_city, Augmentation.identity())
        assert (out.node_positions == line_city.node_positions).all()
        assert (out.street_times == line_city.street_times).all()
        assert (out.demand == line_city.demand).all()

    def test_rotation_preserves_distances(self, line_city):
        aug = Augmentation(time_scale=1.0, rotation=1.234, demand_scale=1.0)
        out = apply_augmentation(line_city, aug)
        before = np.linalg.norm(
            line_city.node_positions[:, None] - line_city.node_positions[None, :], axis=-1
        )
        after = np.linalg.norm(
            out.node_positions[:, None] - out.node_positions[None, :], axis=-1
        )
        np.testing.assert_allclose(after, before, atol=1e-9)
        assert (out.street_times == line_city.street_times).all()

    def test_time_scale_doubles_times(self, line_city):
        aug = Augmentation(time_scale=2.0, rotation=0.0, demand_scale=1.0)
        out = apply_augmentation(line_city, aug)
        finite = np.isfinite(line_city.street_times)
        assert (out.street_times[finite] == 2.0 * line_city.street_times[finite]).all()
        t_before = all_pairs_shortest_paths(line_city).times
        t_after = all_pairs_shortest_paths(out).times
        np.testing.assert_allclose(t_after, 2.0 * t_before, atol=1e-9)

    def test_augmented_city_is_valid(self):
        rng = np.random.default_rng(3)
        city = random_connected_city(rng, 7)
        for _ in range(5):
            apply_augmentation(city, draw_augmentation(rng)).validate()

    def test_draw_ranges(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            aug = draw_augmentation(rng)
            assert 0.4 <= aug.time_scale <= 1.6
            assert 0.0 <= aug.rotation < 2 * np.pi
            assert 0.8 <= aug.demand_scale <= 1.2


class TestTrainConfig:
    def test_from_dict_round_trip(self):
        config = small_config()
        import json

        again = TrainConfig.from_dict(json.loads(config.to_json()))
        assert again == config

    def test_invalid_split_rejected(self):
        with pytest.raises(ValueError):
            small_config(val_fraction=1.5)


class TestEpisodeTerms:
    def test_baseline_zero_reduces_to_plain_reinforce(self):
        rng = np.random.default_rng(11)
        city = random_connected_city(rng, 6)
        sp = all_pairs_shortest_paths(city)
        from tndp.policy import FeatureScaler

        scaler = FeatureScaler.fit([city], [sp], 2)
        model = PolicyModel.new(SMALL_MODEL, scaler, seed=1)
        with torch.no_grad():  # force baseline(c, alpha) == 0 exactly
            model.baseline.mlp[-1].weight.zero_()
            model.baseline.mlp[-1].bias.zero_()
        mdp = make_mdp(city, 2, 2, 4)

        term, _, result = episode_terms(model, mdp, np.random.default_rng(7))
        model.net.zero_grad()
        term.backward()
        grads = [p.grad.clone() for p in model.net.parameters()]

        # plain REINFORCE on the identical episode (same rng stream)
        term2, _, result2 = episode_terms(model, mdp, np.random.default_rng(7))
        assert result2.routes == result.routes
        plain = -result2.reward * sum(
            lp for lp in result2.log_probs if torch.is_tensor(lp)
        )
        model.net.zero_grad()
        plain.backward()
        for g, p in zip(grads, model.net.parameters()):
            assert torch.allclose(g, p.grad, atol=1e-10)


class TestTrain:
    def test_best_epoch_selection_invariant(self):
        config = small_config()
        cities = small_cities(config)
        model, history = train(config, cities)
        best = history["best_epoch"]
        assert history["validation_costs"][best] <= min(history["validation_costs"])

    def test_returned_model_matches_best_validation(self):
        config = small_config()
        cities = small_cities(config)
        model, history = train(config, cities)
        from tndp.training import _CityBank

        bank = _CityBank(cities, config)
        n_train = max(1, int(round(len(cities) * 0.9)))
        n_train = min(n_train, len(cities) - 1)
        val_idx = list(range(n_train, len(cities)))
        again = validation_cost(
            model, bank, val_idx, config.validation_alphas, config.seed
        )
        assert again == pytest.approx(
            history["validation_costs"][history["best_epoch"]], abs=1e-9
        )

    def test_single_city_cost_decreases(self):
        # one city trained on repeatedly: mean episode cost drops >= 10%
        config = small_config(
            dataset_size=2, epochs=200, batch_size=1, augment=False, seed=2,
            alpha_range=(0.5, 0.5), validation_alphas=(0.5,),
            policy_lr=1e-3, baseline_lr=5e-3, torch_threads=1,
        )
        rng = np.random.default_rng(0)
        city = random_connected_city(rng, 8)
        records = []
        train(config, [city, city], log_record=records.append)
        episodes = [r["mean_cost"] for r in records if r["event"] == "batch"]
        assert len(episodes) == 200
        first, last = np.mean(episodes[:10]), np.mean(episodes[-10:])
        assert last <= 0.9 * first

    def test_bit_reproducible_with_fixed_seed(self):
        config = small_config(torch_threads=1, epochs=1)
        cities = small_cities(config)
        model1, history1 = train(config, cities)
        model2, history2 = train(config, cities)
        assert history1["validation_costs"] == history2["validation_costs"]
        for p1, p2 in zip(model1.net.parameters(), model2.net.parameters()):
            assert torch.equal(p1, p2)

    def test_nonfinite_loss_aborts(self, monkeypatch):
        config = small_config(epochs=1)
        cities = small_cities(config)
        import tndp.training as training_module

        def bad_terms(model, mdp, rng):
            term, baseline_term, result = episode_terms(model, mdp, rng)
            return term * float("nan"), baseline_term, result

        monkeypatch.setattr(training_module, "episode_terms", bad_terms)
        with pytest.raises(TrainingError, match="non-finite"):
            train(config, cities)

    def test_progress_log_records(self):
        config = small_config(epochs=1)
        cities = small_cities(config)
        records = []
        train(config, cities, log_record=records.append)
        events = {r["event"] for r in records}
        assert events == {"batch", "validation"}
        batch = next(r for r in records if r["event"] == "batch")
        assert {"epoch", "batch", "mean_cost"} <= set(batch)


class TestEvaluatePolicy:
    def test_k1_and_nested_monotonicity(self):
        rng = np.random.default_rng(13)
        cities = [random_connected_city(rng, 6)]
        sp = all_pairs_shortest_paths(cities[0])
        from tndp.policy import FeatureScaler

        scaler = FeatureScaler.fit(cities, [sp], 2)
        model = PolicyModel.new(SMALL_MODEL, scaler, seed=2)
        single = evaluate_policy(
            model, cities, alpha=0.5, samples=1, num_routes=2, min_stops=2, max_stops=4
        )[0]
        assert single.samples == 1

        nested = evaluate_policy(
            model, cities, alpha=0.5, samples=24, num_routes=2, min_stops=2,
            max_stops=4, thresholds=(4, 12, 24),
        )[0]
        assert nested.cost_at[4] >= nested.cost_at[12] >= nested.cost_at[24]
        assert nested.cost_at[24] == nested.best.cost.total
