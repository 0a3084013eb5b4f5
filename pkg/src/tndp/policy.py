"""Learned route-planning policy.

The model treats the city as a fully connected graph over stop locations.
A stack of edge-conditioned graph-attention layers produces node
embeddings; an extension head scores candidate path extensions against the
route under construction, a halt head decides whether to finish the route,
and a small regression net predicts the expected episode return for
variance reduction during training.

All raw inputs are standardized with per-channel statistics fitted once on
a city dataset; the statistics travel with the model checkpoint.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .city import CityGraph, Route, ShortestPathData
from .mdp import CONTINUE, HALT, MdpState, TransitMdp

NODE_CHANNELS = 3  # x, y, total demand at node
EDGE_CHANNELS = 6  # demand, street flag, street time, shortest-path time,
#                    direct-transit flag, current-route flag
PATH_CHANNELS = 3  # stops / n, one-way drive time / max T, demand covered / total
SUMMARY_CHANNELS = 5  # |r|/MAX, drive(r)/max T, demand(r)/total, |routes|/S, alpha
BASELINE_CHANNELS = 5  # alpha, n, total demand, mean street time, num routes


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 64
    num_layers: int = 3
    num_heads: int = 4
    edge_embed_dim: int = 16
    head_hidden: int = 64
    baseline_hidden: int = 64
    max_candidates: int = 40  # static top-K pruning of extension sets
    leaky_slope: float = 0.2

    def __post_init__(self):
        if self.embed_dim % self.num_heads:
            raise ValueError("embed_dim must be divisible by num_heads")


@dataclass(frozen=True)
class FeatureTensor:
    """Raw (unnormalized) model inputs for one state."""

    node_features: np.ndarray  # (n, NODE_CHANNELS)
    edge_features: np.ndarray  # (n, n, EDGE_CHANNELS)
    alpha: float


class CityStatics:
    """State-independent features of one city, shared across rollouts."""

    def __init__(self, city: CityGraph, sp_data: ShortestPathData):
        self.city = city
        self.sp_data = sp_data
        n = city.num_nodes
        node = np.zeros((n, NODE_CHANNELS))
        node[:, 0:2] = city.node_positions
        node[:, 2] = city.demand.sum(axis=1)
        self.node_features = node

        street = np.isfinite(city.street_times)
        edge = np.zeros((n, n, EDGE_CHANNELS))
        edge[:, :, 0] = city.demand
        edge[:, :, 1] = street
        edge[:, :, 2] = np.where(street, city.street_times, 0.0)
        edge[:, :, 3] = sp_data.times
        self.edge_base = edge

        self.total_demand = float(city.demand.sum())
        self.max_time = sp_data.max_time
        self.mean_street_time = float(city.street_times[street].mean())

        paths = sp_data.ordered_paths()
        self.path_id = {p: i for i, p in enumerate(paths)}
        feats = np.zeros((len(paths), PATH_CHANNELS))
        for pid, path in enumerate(paths):
            hops = np.array(path)
            drive = float(city.street_times[hops[:-1], hops[1:]].sum())
            covered = float(city.demand[np.ix_(hops, hops)].sum()) / 2.0
            feats[pid, 0] = len(path) / n
            feats[pid, 1] = drive / self.max_time
            feats[pid, 2] = covered / self.total_demand if self.total_demand else 0.0
        self.path_features = feats
        # cheap static desirability used to prune oversized candidate sets
        drive_times = feats[:, 1] * self.max_time
        self.path_scores = np.divide(
            feats[:, 2], drive_times, out=np.zeros(len(paths)), where=drive_times > 0
        )

    def route_demand(self, route: Route) -> float:
        if len(route) < 2:
            return 0.0
        hops = np.array(route)
        return float(self.city.demand[np.ix_(hops, hops)].sum()) / 2.0

    def route_drive(self, route: Route) -> float:
        if len(route) < 2:
            return 0.0
        hops = np.array(route)
        return float(self.city.street_times[hops[:-1], hops[1:]].sum())

    def rescaled(
        self,
        city: CityGraph,
        sp_data: ShortestPathData,
        time_scale: float,
        demand_scale: float,
    ) -> "CityStatics":
        """Statics for a uniformly rescaled version of the same city.

        Valid only when ``city``/``sp_data`` differ from the originals by
        multiplying all times by ``time_scale``, all demand by
        ``demand_scale``, and rigidly moving node positions.  Path identity
        is preserved, so path-level features carry over.
        """
        clone = object.__new__(CityStatics)
        clone.city = city
        clone.sp_data = sp_data
        node = self.node_features.copy()
        node[:, 0:2] = city.node_positions
        node[:, 2] *= demand_scale
        clone.node_features = node
        edge = self.edge_base.copy()
        edge[:, :, 0] *= demand_scale
        edge[:, :, 2] *= time_scale
        edge[:, :, 3] *= time_scale
        clone.edge_base = edge
        clone.total_demand = self.total_demand * demand_scale
        clone.max_time = self.max_time * time_scale
        clone.mean_street_time = self.mean_street_time * time_scale
        clone.path_id = self.path_id
        clone.path_features = self.path_features
        clone.path_scores = self.path_scores * (demand_scale / time_scale)
        return clone


_STATICS_CACHE: OrderedDict[int, CityStatics] = OrderedDict()
_STATICS_CACHE_SIZE = 4096


def city_statics(city: CityGraph, sp_data: ShortestPathData) -> CityStatics:
    key = id(sp_data)
    hit = _STATICS_CACHE.get(key)
    if hit is not None and hit.sp_data is sp_data:
        _STATICS_CACHE.move_to_end(key)
        return hit
    statics = CityStatics(city, sp_data)
    register_statics(statics)
    return statics


def register_statics(statics: CityStatics) -> None:
    """Seed the cache with precomputed statics (e.g. rescaled ones)."""
    _STATICS_CACHE[id(statics.sp_data)] = statics
    while len(_STATICS_CACHE) > _STATICS_CACHE_SIZE:
        _STATICS_CACHE.popitem(last=False)


def fill_dynamic_channels(edge: np.ndarray, state: MdpState) -> None:
    """Overwrite the transit-link and current-route channels for ``state``."""
    edge[:, :, 4] = 0.0
    edge[:, :, 5] = 0.0
    for route in state.finished_routes:
        hops = np.array(route)
        edge[np.ix_(hops, hops, [4])] = 1.0
    if state.current_route:
        hops = np.array(state.current_route)
        edge[np.ix_(hops, hops, [5])] = 1.0


def featurize(
    city: CityGraph, sp_data: ShortestPathData, state: MdpState, alpha: float
) -> FeatureTensor:
    """Assemble raw node and edge features for one state."""
    statics = city_statics(city, sp_data)
    edge = statics.edge_base.copy()
    fill_dynamic_channels(edge, state)
    return FeatureTensor(statics.node_features, edge, alpha)


def summary_features(
    statics: CityStatics, state: MdpState, alpha: float, num_routes: int, max_stops: int
) -> np.ndarray:
    route = state.current_route
    return np.array(
        [
            len(route) / max_stops,
            statics.route_drive(route) / statics.max_time,
            statics.route_demand(route) / statics.total_demand
            if statics.total_demand
            else 0.0,
            len(state.finished_routes) / num_routes,
            alpha,
        ]
    )


def baseline_features(statics: CityStatics, alpha: float, num_routes: int) -> np.ndarray:
    return np.array(
        [
            alpha,
            float(statics.city.num_nodes),
            statics.total_demand,
            statics.mean_street_time,
            float(num_routes),
        ]
    )


# -- input normalization -------------------------------------------------------


def normalize_fit(samples: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and std over stacked samples (channels last).

    Channels with zero variance get a divisor of 1 so constant inputs map
    to zero rather than blowing up.
    """
    stacked = np.concatenate([np.asarray(s).reshape(-1, s.shape[-1]) for s in samples])
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    std[std == 0.0] = 1.0
    return mean, std


def normalize_apply(stats: tuple[np.ndarray, np.ndarray], values: np.ndarray) -> np.ndarray:
    mean, std = stats
    return (np.asarray(values, dtype=float) - mean) / std


@dataclass
class FeatureScaler:
    """Frozen standardization statistics for every model input block."""

    node_mean: np.ndarray
    node_std: np.ndarray
    edge_mean: np.ndarray
    edge_std: np.ndarray
    baseline_mean: np.ndarray
    baseline_std: np.ndarray

    @classmethod
    def fit(
        cls,
        cities: list[CityGraph],
        sp_datas: list[ShortestPathData],
        num_routes: int,
    ) -> "FeatureScaler":
        """Fit statistics on the empty-network features of a city dataset."""
        statics = [city_statics(c, sp) for c, sp in zip(cities, sp_datas)]
        node_mean, node_std = normalize_fit([s.node_features for s in statics])
        edge_mean, edge_std = normalize_fit([s.edge_base for s in statics])
        rows = np.stack([baseline_features(s, 0.0, num_routes) for s in statics])
        base_mean, base_std = normalize_fit([rows])
        return cls(node_mean, node_std, edge_mean, edge_std, base_mean, base_std)

    def apply(self, features: FeatureTensor) -> tuple[np.ndarray, np.ndarray]:
        node = normalize_apply((self.node_mean, self.node_std), features.node_features)
        edge = normalize_apply((self.edge_mean, self.edge_std), features.edge_features)
        return node, edge

    def apply_node_edge(self, node: np.ndarray, edge: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return (
            normalize_apply((self.node_mean, self.node_std), node),
            normalize_apply((self.edge_mean, self.edge_std), edge),
        )

    def apply_baseline(self, row: np.ndarray) -> np.ndarray:
        return normalize_apply((self.baseline_mean, self.baseline_std), row)

    def to_dict(self) -> dict:
        return {k: np.asarray(v).tolist() for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: dict) -> "FeatureScaler":
        return cls(**{k: np.asarray(v, dtype=float) for k, v in data.items()})


# -- networks -------------------------------------------------------------------


class EdgeAttentionLayer(nn.Module):
    """Dense multi-head attention over all node pairs, conditioned on edge features."""

    def __init__(self, dim: int, heads: int, edge_dim: int, slope: float):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.slope = slope
        self.src = nn.Linear(dim, dim)
        self.dst = nn.Linear(dim, dim)
        self.edge = nn.Linear(edge_dim, dim)
        self.attn = nn.Parameter(torch.empty(heads, self.head_dim))
        nn.init.xavier_uniform_(self.attn)
        self.msg = nn.Linear(dim, dim)
        self.msg_edge = nn.Linear(edge_dim, dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, h: torch.Tensor, e: torch.Tensor) -> torch.Tensor:
        b, n, d = h.shape
        z = self.src(h).unsqueeze(2) + self.dst(h).unsqueeze(1) + self.edge(e)
        z = F.leaky_relu(z, self.slope).view(b, n, n, self.heads, self.head_dim)
        # receiver i attends over senders j; einsum keeps intermediates 4-D
        logits = torch.einsum("bijhd,hd->bijh", z, self.attn)
        weights = torch.softmax(logits, dim=2)
        node_values = self.msg(h).view(b, n, self.heads, self.head_dim)
        edge_values = self.msg_edge(e).view(b, n, n, self.heads, self.head_dim)
        pooled = torch.einsum("bijh,bjhd->bihd", weights, node_values)
        pooled = pooled + torch.einsum("bijh,bijhd->bihd", weights, edge_values)
        return torch.relu(h + self.out(pooled.reshape(b, n, d)))


class PolicyNet(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.node_in = nn.Linear(NODE_CHANNELS, config.embed_dim)
        self.edge_in = nn.Linear(EDGE_CHANNELS, config.edge_embed_dim)
        self.layers = nn.ModuleList(
            EdgeAttentionLayer(
                config.embed_dim, config.num_heads, config.edge_embed_dim, config.leaky_slope
            )
            for _ in range(config.num_layers)
        )
        ext_in = 2 * config.embed_dim + PATH_CHANNELS + 1
        self.extension_head = nn.Sequential(
            nn.Linear(ext_in, config.head_hidden),
            nn.ReLU(),
            nn.Linear(config.head_hidden, 1),
        )
        self.halt_head = nn.Sequential(
            nn.Linear(config.embed_dim + SUMMARY_CHANNELS, config.head_hidden),
            nn.ReLU(),
            nn.Linear(config.head_hidden, 1),
        )

    def embed(self, node: torch.Tensor, edge: torch.Tensor) -> torch.Tensor:
        """Node embeddings for a batch: (b, n, node_ch), (b, n, n, edge_ch) -> (b, n, d)."""
        e = torch.relu(self.edge_in(edge))
        h = self.node_in(node)
        for layer in self.layers:
            h = layer(h, e)
        return h

    def extension_logits(self, rows: torch.Tensor) -> torch.Tensor:
        return self.extension_head(rows).squeeze(-1)

    def halt_logits(self, rows: torch.Tensor) -> torch.Tensor:
        return self.halt_head(rows).squeeze(-1)


class BaselineNet(nn.Module):
    """Predicts the episode return from summary statistics of (city, alpha)."""

    def __init__(self, hidden: int = 64):
        super().__init__()
        self.mlp = nn.Sequential(
            nn.Linear(BASELINE_CHANNELS, hidden),
            nn.ReLU(),
            nn.Linear(hidden, hidden),
            nn.ReLU(),
            nn.Linear(hidden, 1),
        )

    def forward(self, rows: torch.Tensor) -> torch.Tensor:
        return self.mlp(rows).squeeze(-1)


# -- spec'd functional surface ---------------------------------------------------


def forward_backbone(
    net: PolicyNet, scaler: FeatureScaler, features: FeatureTensor
) -> torch.Tensor:
    """Embeddings (n, d) for one state's features."""
    node, edge = scaler.apply(features)
    dtype = next(net.parameters()).dtype
    node_t = torch.from_numpy(node).to(dtype).unsqueeze(0)
    edge_t = torch.from_numpy(edge).to(dtype).unsqueeze(0)
    return net.embed(node_t, edge_t)[0]


def score_extensions(
    net: PolicyNet,
    embeddings: torch.Tensor,
    statics: CityStatics,
    candidates: list[Route],
    alpha: float,
) -> torch.Tensor:
    """Probability distribution over the given candidate paths."""
    if not candidates:
        raise ValueError("empty candidate set")
    log_probs = extension_log_probs(net, embeddings, statics, candidates, alpha)
    return torch.exp(log_probs)


def extension_log_probs(
    net: PolicyNet,
    embeddings: torch.Tensor,
    statics: CityStatics,
    candidates: list[Route],
    alpha: float,
) -> torch.Tensor:
    pids = np.array([statics.path_id[p] for p in candidates])
    firsts = np.array([p[0] for p in candidates])
    lasts = np.array([p[-1] for p in candidates])
    dtype = embeddings.dtype
    feats = torch.from_numpy(statics.path_features[pids]).to(dtype)
    alpha_col = torch.full((len(candidates), 1), float(alpha), dtype=dtype)
    rows = torch.cat(
        [embeddings[firsts], embeddings[lasts], feats, alpha_col], dim=-1
    )
    return F.log_softmax(net.extension_logits(rows), dim=0)


def halt_probability(
    net: PolicyNet,
    embeddings: torch.Tensor,
    statics: CityStatics,
    state: MdpState,
    alpha: float,
    num_routes: int,
    min_stops: int,
    max_stops: int,
) -> torch.Tensor:
    """Probability of halting, masked by the halt-action legality rules."""
    k = len(state.current_route)
    dtype = embeddings.dtype
    if k < min_stops:
        return torch.zeros((), dtype=dtype)
    if k == max_stops:
        return torch.ones((), dtype=dtype)
    summary = summary_features(statics, state, alpha, num_routes, max_stops)
    row = torch.cat(
        [embeddings.mean(dim=0), torch.from_numpy(summary).to(dtype)]
    ).unsqueeze(0)
    return torch.sigmoid(net.halt_logits(row))[0]


def baseline_predict(
    baseline: BaselineNet,
    scaler: FeatureScaler,
    city: CityGraph,
    sp_data: ShortestPathData,
    alpha: float,
    num_routes: int,
) -> torch.Tensor:
    statics = city_statics(city, sp_data)
    row = scaler.apply_baseline(baseline_features(statics, alpha, num_routes))
    dtype = next(baseline.parameters()).dtype
    return baseline(torch.from_numpy(row).to(dtype).unsqueeze(0))[0]


def prune_candidate_ids(
    statics: CityStatics, pids: np.ndarray, limit: int
) -> np.ndarray:
    """Keep the top ``limit`` candidates by static demand-per-second score."""
    if len(pids) <= limit:
        return pids
    scores = statics.path_scores[pids]
    order = np.argsort(-scores, kind="stable")[:limit]
    return pids[np.sort(order)]


# -- model bundle -----------------------------------------------------------------


@dataclass
class PolicyModel:
    """Everything needed to run the planner: nets, scaler, architecture config."""

    config: ModelConfig
    net: PolicyNet
    baseline: BaselineNet
    scaler: FeatureScaler

    @classmethod
    def new(cls, config: ModelConfig, scaler: FeatureScaler, seed: int = 0) -> "PolicyModel":
        torch.manual_seed(seed)
        return cls(
            config=config,
            net=PolicyNet(config),
            baseline=BaselineNet(config.baseline_hidden),
            scaler=scaler,
        )

    def save(self, path: str | Path, extra: dict | None = None) -> None:
        payload = {
            "format_version": 1,
            "model_config": asdict(self.config),
            "policy_state": self.net.state_dict(),
            "baseline_state": self.baseline.state_dict(),
            "scaler": self.scaler.to_dict(),
            "extra": extra or {},
        }
        torch.save(payload, path)

    @classmethod
    def load(cls, path: str | Path) -> "PolicyModel":
        payload = torch.load(path, weights_only=True)
        version = payload.get("format_version")
        if version != 1:
            raise ValueError(f"unsupported checkpoint format {version!r}")
        config = ModelConfig(**payload["model_config"])
        net = PolicyNet(config)
        net.load_state_dict(payload["policy_state"])
        baseline = BaselineNet(config.baseline_hidden)
        baseline.load_state_dict(payload["baseline_state"])
        scaler = FeatureScaler.from_dict(payload["scaler"])
        return cls(config=config, net=net, baseline=baseline, scaler=scaler)


class NeuralPolicy:
    """Policy-protocol adapter around a PolicyModel for single rollouts.

    ``greedy`` switches from sampling to argmax decisions, which makes
    rollouts deterministic for a fixed state.
    """

    def __init__(self, model: PolicyModel, greedy: bool = False):
        self.model = model
        self.greedy = greedy
        self._cache_mdp = None  # strong ref keeps the cached problem's id stable
        self._cache_state = None
        self._cache_embed = None

    def _embeddings(self, mdp: TransitMdp, state: MdpState) -> tuple[torch.Tensor, CityStatics]:
        statics = city_statics(mdp.city, mdp.sp_data)
        key = (state.finished_routes, state.current_route)
        if self._cache_mdp is mdp and self._cache_state == key:
            return self._cache_embed, statics
        features = featurize(mdp.city, mdp.sp_data, state, mdp.weights.alpha)
        embeddings = forward_backbone(self.model.net, self.model.scaler, features)
        self._cache_mdp = mdp
        self._cache_state = key
        self._cache_embed = embeddings
        return embeddings, statics

    def choose_extension(self, mdp, state, candidates, rng):
        embeddings, statics = self._embeddings(mdp, state)
        pids = np.array([statics.path_id[p] for p in candidates])
        keep = prune_candidate_ids(statics, pids, self.model.config.max_candidates)
        kept_positions = {pid: i for i, pid in enumerate(pids)}
        positions = np.array([kept_positions[pid] for pid in keep])
        kept_paths = [candidates[i] for i in positions]
        log_probs = extension_log_probs(
            self.model.net, embeddings, statics, kept_paths, mdp.weights.alpha
        )
        probs = torch.exp(log_probs).detach().cpu().numpy().astype(float)
        probs /= probs.sum()
        if self.greedy:
            pick = int(np.argmax(probs))
        else:
            pick = int(rng.choice(len(probs), p=probs))
        return int(positions[pick]), log_probs[pick]

    def choose_halt(self, mdp, state, allowed, rng):
        if allowed == (CONTINUE,):
            return CONTINUE, 0.0
        if allowed == (HALT,):
            return HALT, 0.0
        embeddings, statics = self._embeddings(mdp, state)
        p_halt = halt_probability(
            self.model.net,
            embeddings,
            statics,
            state,
            mdp.weights.alpha,
            mdp.num_routes,
            mdp.min_stops,
            mdp.max_stops,
        )
        value = float(p_halt.detach())
        if self.greedy:
            halt = value >= 0.5
        else:
            halt = rng.random() < value
        if halt:
            return HALT, torch.log(p_halt.clamp_min(1e-12))
        return CONTINUE, torch.log((1.0 - p_halt).clamp_min(1e-12))
