"""Policy-gradient training of the route planner on synthetic cities.

Each update performs full rollouts on a batch of (augmented) cities, scores
the finished networks, and reinforces every decision of an episode with the
episode's return minus a learned per-city baseline.  The return is simply
the negative final cost, since intermediate rewards are zero and no
discounting is applied.  After every epoch the policy is scored on a held
out validation split, and the weights from the best epoch are returned.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import torch

from .city import CityGraph, all_pairs_shortest_paths
from .citygen import GenConfig, generate_dataset
from .costs import CostWeights
from .mdp import TransitMdp
from .policy import (
    FeatureScaler,
    ModelConfig,
    NeuralPolicy,
    PolicyModel,
    baseline_predict,
    city_statics,
    register_statics,
)


class TrainingError(RuntimeError):
    """Raised when optimization produces non-finite losses."""


@dataclass(frozen=True)
class TrainConfig:
    dataset_size: int = 32768
    num_nodes: int = 20
    val_fraction: float = 0.1
    epochs: int = 5
    batch_size: int = 64
    num_routes: int = 10
    min_stops: int = 2
    max_stops: int = 15
    alpha_range: tuple[float, float] = (0.0, 1.0)
    beta: float = 5.0
    transfer_penalty: float = 300.0
    policy_lr: float = 1e-4
    baseline_lr: float = 5e-4
    grad_clip: float = 1.0
    augment: bool = True
    validation_alphas: tuple[float, ...] = (0.0, 0.5, 1.0)
    seed: int = 0
    torch_threads: int | None = None
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in (0, 1)")
        if min(self.epochs, self.batch_size, self.dataset_size) < 1:
            raise ValueError("epochs, batch_size and dataset_size must be positive")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        if "model" in data and isinstance(data["model"], dict):
            data["model"] = ModelConfig(**data["model"])
        for key in ("alpha_range", "validation_alphas"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)


@dataclass(frozen=True)
class Augmentation:
    """One draw of the training-time city transformation."""

    time_scale: float  # multiplies positions and drive times
    rotation: float  # radians, about the position centroid
    demand_scale: float

    @classmethod
    def identity(cls) -> "Augmentation":
        return cls(1.0, 0.0, 1.0)


def draw_augmentation(rng: np.random.Generator) -> Augmentation:
    return Augmentation(
        time_scale=float(rng.uniform(0.4, 1.6)),
        rotation=float(rng.uniform(0.0, 2.0 * np.pi)),
        demand_scale=float(rng.uniform(0.8, 1.2)),
    )


def apply_augmentation(city: CityGraph, aug: Augmentation) -> CityGraph:
    """Scale distances/times, rotate positions about their centroid, scale demand."""
    positions = city.node_positions * aug.time_scale
    centroid = positions.mean(axis=0)
    c, s = np.cos(aug.rotation), np.sin(aug.rotation)
    rot = np.array([[c, -s], [s, c]])
    positions = (positions - centroid) @ rot.T + centroid
    return CityGraph(
        node_positions=positions,
        street_times=city.street_times * aug.time_scale,
        demand=city.demand * aug.demand_scale,
    )


def augment(city: CityGraph, rng: np.random.Generator) -> CityGraph:
    return apply_augmentation(city, draw_augmentation(rng))


class _CityBank:
    """Per-city precomputation shared by every (augmented) episode."""

    def __init__(self, cities, config: TrainConfig):
        self.cities = cities
        self.sp_datas = [all_pairs_shortest_paths(c) for c in cities]
        base_weights = CostWeights.for_problem(
            self.sp_datas[0], config.num_routes, alpha=0.5,
            beta=config.beta, transfer_penalty=config.transfer_penalty,
        )
        self.base_mdps = [
            TransitMdp(
                city, sp, base_weights, config.num_routes, config.min_stops, config.max_stops
            )
            for city, sp in zip(cities, self.sp_datas)
        ]
        self.statics = [city_statics(c, sp) for c, sp in zip(cities, self.sp_datas)]
        self.config = config

    def problem(self, i: int, alpha: float, aug: Augmentation) -> TransitMdp:
        """Build the episode problem; augmentation reuses the base shortest paths."""
        config = self.config
        if aug == Augmentation.identity():
            city, sp = self.cities[i], self.sp_datas[i]
        else:
            city = apply_augmentation(self.cities[i], aug)
            base_sp = self.sp_datas[i]
            sp = type(base_sp)(
                times=base_sp.times * aug.time_scale,
                next_hop=base_sp.next_hop,
                paths=base_sp.paths,
            )
            register_statics(
                self.statics[i].rescaled(city, sp, aug.time_scale, aug.demand_scale)
            )
        weights = CostWeights.for_problem(
            sp, config.num_routes, alpha, config.beta, config.transfer_penalty
        )
        return TransitMdp(
            city,
            sp,
            weights,
            config.num_routes,
            config.min_stops,
            config.max_stops,
            path_index=self.base_mdps[i].path_index,
        )


def episode_terms(model: PolicyModel, mdp: TransitMdp, rng: np.random.Generator):
    """One training rollout: (policy loss term, baseline loss term, result)."""
    policy = NeuralPolicy(model)
    result = mdp.rollout(policy, rng)
    ret = result.reward
    predicted = baseline_predict(
        model.baseline, model.scaler, mdp.city, mdp.sp_data, mdp.weights.alpha, mdp.num_routes
    )
    log_prob_sum = sum(
        (lp for lp in result.log_probs if torch.is_tensor(lp)),
        start=torch.zeros(()),
    )
    advantage = ret - float(predicted.detach())
    policy_term = -advantage * log_prob_sum
    baseline_term = (predicted - ret) ** 2
    return policy_term, baseline_term, result


def calibrate_baseline(
    model: PolicyModel,
    bank: _CityBank,
    train_idx: list[int],
    config: TrainConfig,
    rng: np.random.Generator,
) -> None:
    """Shift the baseline's output bias to the mean return of the initial policy.

    Until the baseline roughly centers the returns, every advantage shares
    one sign and updates push all sampled actions uniformly instead of
    selectively; one calibration pass removes that transient.
    """
    sample = train_idx[: min(config.batch_size, len(train_idx))]
    returns, predictions = [], []
    with torch.no_grad():
        for i in sample:
            alpha = float(rng.uniform(*config.alpha_range))
            mdp = bank.problem(int(i), alpha, Augmentation.identity())
            result = mdp.rollout(NeuralPolicy(model), rng)
            returns.append(result.reward)
            predictions.append(
                float(
                    baseline_predict(
                        model.baseline, model.scaler, mdp.city, mdp.sp_data,
                        alpha, mdp.num_routes,
                    )
                )
            )
        shift = float(np.mean(returns)) - float(np.mean(predictions))
        model.baseline.mlp[-1].bias += shift


def validation_cost(
    model: PolicyModel,
    bank: _CityBank,
    indices: list[int],
    alphas: tuple[float, ...],
    seed: int,
) -> float:
    """Mean total cost over the split, one stochastic rollout per (city, alpha)."""
    # fixed stream so validation draws are identical across epochs
    rng = np.random.default_rng(np.random.SeedSequence([seed, 58837]))
    totals = []
    with torch.no_grad():
        for i in indices:
            for alpha in alphas:
                mdp = bank.problem(i, alpha, Augmentation.identity())
                result = mdp.rollout(NeuralPolicy(model), rng)
                totals.append(result.cost.total)
    return float(np.mean(totals))


def train(
    config: TrainConfig,
    cities: list[CityGraph],
    log_record=None,
) -> tuple[PolicyModel, dict]:
    """REINFORCE-with-baseline over the dataset; returns best-epoch weights.

    ``log_record`` is called with one dict per progress event (batch or
    validation), suitable for line-delimited logging.
    """
    if config.torch_threads:
        torch.set_num_threads(config.torch_threads)
    if len(cities) < 2:
        raise ValueError("need at least 2 cities to split")
    rng = np.random.default_rng(config.seed)

    n_train = max(1, int(round(len(cities) * (1.0 - config.val_fraction))))
    n_train = min(n_train, len(cities) - 1)
    train_idx = list(range(n_train))
    val_idx = list(range(n_train, len(cities)))

    bank = _CityBank(cities, config)
    scaler = FeatureScaler.fit(
        [cities[i] for i in train_idx],
        [bank.sp_datas[i] for i in train_idx],
        config.num_routes,
    )
    model = PolicyModel.new(config.model, scaler, seed=config.seed)
    policy_opt = torch.optim.Adam(model.net.parameters(), lr=config.policy_lr)
    baseline_opt = torch.optim.Adam(model.baseline.parameters(), lr=config.baseline_lr)

    def emit(record: dict) -> None:
        if log_record is not None:
            log_record(record)

    def snapshot() -> dict:
        return {
            "net": copy.deepcopy(model.net.state_dict()),
            "baseline": copy.deepcopy(model.baseline.state_dict()),
        }

    calibrate_baseline(model, bank, train_idx, config, rng)
    val_costs = [
        validation_cost(model, bank, val_idx, config.validation_alphas, config.seed)
    ]
    emit({"event": "validation", "epoch": 0, "validation_cost": val_costs[0]})
    best_epoch, best_state = 0, snapshot()

    batch_records = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(train_idx)
        for batch_no, start in enumerate(range(0, len(order), config.batch_size)):
            chunk = order[start : start + config.batch_size]
            policy_terms, baseline_terms, episode_costs = [], [], []
            for i in chunk:
                alpha = float(rng.uniform(*config.alpha_range))
                aug = draw_augmentation(rng) if config.augment else Augmentation.identity()
                mdp = bank.problem(int(i), alpha, aug)
                policy_term, baseline_term, result = episode_terms(model, mdp, rng)
                policy_terms.append(policy_term)
                baseline_terms.append(baseline_term)
                episode_costs.append(result.cost.total)

            policy_loss = torch.stack(policy_terms).mean()
            baseline_loss = torch.stack(baseline_terms).mean()
            if not (torch.isfinite(policy_loss) and torch.isfinite(baseline_loss)):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch} batch {batch_no}: "
                    f"policy={policy_loss.item()} baseline={baseline_loss.item()}"
                )
            policy_opt.zero_grad()
            policy_loss.backward()
            torch.nn.utils.clip_grad_norm_(model.net.parameters(), config.grad_clip)
            policy_opt.step()
            baseline_opt.zero_grad()
            baseline_loss.backward()
            baseline_opt.step()

            record = {
                "event": "batch",
                "epoch": epoch,
                "batch": batch_no,
                "mean_cost": float(np.mean(episode_costs)),
                "policy_loss": policy_loss.item(),
                "baseline_loss": baseline_loss.item(),
            }
            batch_records.append(record)
            emit(record)

        val = validation_cost(model, bank, val_idx, config.validation_alphas, config.seed)
        val_costs.append(val)
        emit({"event": "validation", "epoch": epoch, "validation_cost": val})
        if val < val_costs[best_epoch]:
            best_epoch, best_state = epoch, snapshot()

    model.net.load_state_dict(best_state["net"])
    model.baseline.load_state_dict(best_state["baseline"])
    history = {
        "validation_costs": val_costs,
        "best_epoch": best_epoch,
        "batches": batch_records,
    }
    return model, history


def make_training_dataset(config: TrainConfig, gen: GenConfig | None = None):
    """Synthesize the training cities described by the config."""
    if gen is None:
        gen = GenConfig(num_nodes=config.num_nodes)
    elif gen.num_nodes != config.num_nodes:
        gen = replace(gen, num_nodes=config.num_nodes)
    return generate_dataset(gen, config.dataset_size, config.seed)


def evaluate_policy(
    model: PolicyModel,
    cities: list[CityGraph],
    alpha: float,
    samples: int,
    num_routes: int,
    min_stops: int,
    max_stops: int,
    seed: int = 0,
    beta: float = 5.0,
    transfer_penalty: float = 300.0,
    thresholds: tuple[int, ...] = (),
):
    """Best-of-k planning per city; returns a list of BestOfK outcomes."""
    from .planner import plan_best_of_k

    results = []
    for i, city in enumerate(cities):
        sp = all_pairs_shortest_paths(city)
        weights = CostWeights.for_problem(sp, num_routes, alpha, beta, transfer_penalty)
        mdp = TransitMdp(city, sp, weights, num_routes, min_stops, max_stops)
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        results.append(
            plan_best_of_k(model, mdp, samples, rng, thresholds=thresholds)
        )
    return results
