"""Rolling out the learned policy, one episode at a time or in large batches.

The batched engine advances many construction episodes in lockstep so each
decision step costs a single network forward pass for the whole batch, and
per-lane bookkeeping (candidate sets, route summaries) is incremental.
That makes best-of-k evaluation with large k practical on a CPU.  All
episodes in one batch must be over cities with the same node count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .city import Route, RouteNetwork
from .mdp import CONTINUE, HALT, MdpState, RolloutResult, TransitMdp
from .policy import NeuralPolicy, PolicyModel, city_statics, prune_candidate_ids


def plan_single(
    model: PolicyModel,
    mdp: TransitMdp,
    rng: np.random.Generator,
    initial_routes: RouteNetwork = (),
    greedy: bool = False,
) -> RolloutResult:
    """One policy rollout without gradient tracking."""
    policy = NeuralPolicy(model, greedy=greedy)
    with torch.no_grad():
        return mdp.rollout(policy, rng, initial_routes)


class _Lane:
    """Mutable per-episode bookkeeping inside a batch."""

    __slots__ = (
        "mdp",
        "state",
        "statics",
        "edge_raw",
        "alpha",
        "drive_time",
        "route_demand",
        "log_probs",
        "modes",
        "force_commits",
        "result",
        "pending_pids",
    )

    def __init__(self, mdp: TransitMdp, initial_routes, edge_slice: np.ndarray):
        self.mdp = mdp
        self.state = mdp.initial_state(initial_routes)
        self.statics = city_statics(mdp.city, mdp.sp_data)
        self.alpha = mdp.weights.alpha
        self.edge_raw = edge_slice
        self.edge_raw[:] = self.statics.edge_base
        for route in self.state.finished_routes:
            self.mark_committed(route)
        self.drive_time = 0.0  # one-way seconds of the route in progress
        self.route_demand = 0.0
        self.log_probs: list = []
        self.modes: list[bool] = []
        self.force_commits = 0
        self.result: RolloutResult | None = None
        self.pending_pids: np.ndarray | None = None

    def mark_committed(self, route: Route) -> None:
        hops = np.asarray(route)
        self.edge_raw[np.ix_(hops, hops, [4])] = 1.0

    def refresh_current_route(self) -> None:
        self.edge_raw[:, :, 5] = 0.0
        if self.state.current_route:
            hops = np.asarray(self.state.current_route)
            self.edge_raw[np.ix_(hops, hops, [5])] = 1.0

    def summary(self) -> tuple[float, float, float, float, float]:
        mdp, statics, state = self.mdp, self.statics, self.state
        return (
            len(state.current_route) / mdp.max_stops,
            self.drive_time / statics.max_time,
            self.route_demand / statics.total_demand if statics.total_demand else 0.0,
            len(state.finished_routes) / mdp.num_routes,
            self.alpha,
        )

    def apply_extension(self, pid: int) -> None:
        mdp, statics = self.mdp, self.statics
        path = mdp.paths[pid]
        old = self.state.current_route
        combined = mdp.combine(old, path)
        feats = statics.path_features[pid]
        connector = 0.0
        if old:
            a, b = (old[-1], path[0]) if combined[: len(old)] == old else (path[-1], old[0])
            connector = float(mdp.city.street_times[a, b])
            cross = float(
                mdp.city.demand[np.ix_(np.asarray(path), np.asarray(old))].sum()
            )
        else:
            cross = 0.0
        self.drive_time += connector + feats[1] * statics.max_time
        self.route_demand += cross + feats[2] * statics.total_demand
        self.state = MdpState(
            finished_routes=self.state.finished_routes,
            current_route=combined,
            extend_mode=False,
            step_index=self.state.step_index + 1,
        )

    def commit(self, forced: bool) -> None:
        state = self.state
        routes = state.finished_routes + (state.current_route,)
        self.mark_committed(state.current_route)
        self.drive_time = 0.0
        self.route_demand = 0.0
        if forced:
            self.force_commits += 1
        self.state = MdpState(
            finished_routes=routes,
            current_route=(),
            extend_mode=True,
            step_index=state.step_index + 1,
        )
        if len(routes) == self.mdp.num_routes:
            breakdown = self.mdp.evaluate(routes)
            self.result = RolloutResult(
                routes=routes,
                log_probs=tuple(self.log_probs),
                reward=-breakdown.total,
                cost=breakdown,
                modes=tuple(self.modes),
                force_commits=self.force_commits,
            )

    def continue_route(self) -> None:
        self.state = MdpState(
            finished_routes=self.state.finished_routes,
            current_route=self.state.current_route,
            extend_mode=True,
            step_index=self.state.step_index + 1,
        )

    def settle(self) -> None:
        """Advance through transitions that need no model decision."""
        while self.result is None:
            if self.state.extend_mode:
                pids = self.mdp.extend_action_ids(self.state)
                if len(pids) > 0:
                    self.pending_pids = pids
                    return
                self.commit(forced=True)
            else:
                allowed = self.mdp.halt_actions(self.state)
                if len(allowed) > 1:
                    self.pending_pids = None
                    return
                self.modes.append(False)
                self.log_probs.append(0.0)
                if allowed[0] == HALT:
                    self.commit(forced=False)
                else:
                    self.continue_route()


def run_batch(
    model: PolicyModel,
    tasks: list[tuple[TransitMdp, RouteNetwork]],
    rng: np.random.Generator,
    greedy: bool = False,
) -> list[RolloutResult]:
    """Run one rollout per (problem, initial network) task, in lockstep."""
    if not tasks:
        return []
    sizes = {mdp.city.num_nodes for mdp, _ in tasks}
    if len(sizes) != 1:
        raise ValueError("all batched cities must have the same node count")
    n = sizes.pop()
    count = len(tasks)

    net = model.net
    scaler = model.scaler
    limit = model.config.max_candidates
    np_dtype = np.float64 if next(net.parameters()).dtype == torch.float64 else np.float32
    edge_mean = scaler.edge_mean.astype(np_dtype)
    edge_inv_std = (1.0 / scaler.edge_std).astype(np_dtype)

    edge_buf = np.zeros((count, n, n, 6), dtype=np_dtype)
    lanes = [
        _Lane(mdp, initial, edge_buf[i]) for i, (mdp, initial) in enumerate(tasks)
    ]
    node_all = torch.from_numpy(
        np.stack(
            [
                ((lane.statics.node_features - scaler.node_mean) / scaler.node_std)
                for lane in lanes
            ]
        ).astype(np_dtype)
    )

    with torch.inference_mode():
        while True:
            for lane in lanes:
                if lane.result is None:
                    lane.settle()
            active = [i for i, lane in enumerate(lanes) if lane.result is None]
            if not active:
                break

            for i in active:
                lanes[i].refresh_current_route()
            idx = np.asarray(active)
            edges = (edge_buf[idx] - edge_mean) * edge_inv_std
            embeddings = net.embed(node_all[idx], torch.from_numpy(edges))

            extend_rows, halt_rows = [], []
            for row, i in enumerate(active):
                (extend_rows if lanes[i].state.extend_mode else halt_rows).append(row)
            if extend_rows:
                _step_extensions(
                    net, embeddings, [lanes[active[r]] for r in extend_rows],
                    extend_rows, limit, rng, greedy,
                )
            if halt_rows:
                _step_halts(
                    net, embeddings, [lanes[active[r]] for r in halt_rows],
                    halt_rows, rng, greedy,
                )
    return [lane.result for lane in lanes]


def _step_extensions(net, embeddings, lanes, rows, limit, rng, greedy):
    kept = [
        prune_candidate_ids(lane.statics, lane.pending_pids, limit) for lane in lanes
    ]
    width = max(len(p) for p in kept)
    count = len(lanes)
    np_dtype = np.float64 if embeddings.dtype == torch.float64 else np.float32
    firsts = np.zeros((count, width), dtype=np.int64)
    lasts = np.zeros((count, width), dtype=np.int64)
    feats = np.zeros((count, width, 4), dtype=np_dtype)
    mask = np.zeros((count, width), dtype=bool)
    for row, (lane, pids) in enumerate(zip(lanes, kept)):
        index = lane.mdp.path_index
        k = len(pids)
        firsts[row, :k] = index.first[pids]
        lasts[row, :k] = index.last[pids]
        feats[row, :k, :3] = lane.statics.path_features[pids]
        feats[row, :, 3] = lane.alpha
        mask[row, :k] = True

    emb = embeddings[torch.as_tensor(rows)]
    gather = torch.arange(count).unsqueeze(1)
    net_rows = torch.cat(
        [
            emb[gather, torch.from_numpy(firsts)],
            emb[gather, torch.from_numpy(lasts)],
            torch.from_numpy(feats),
        ],
        dim=-1,
    )
    logits = net.extension_logits(net_rows)
    logits = logits.masked_fill(torch.from_numpy(~mask), float("-inf"))
    probs = torch.softmax(logits, dim=1).numpy().astype(float)
    probs[~mask] = 0.0
    probs /= probs.sum(axis=1, keepdims=True)
    if greedy:
        picks = probs.argmax(axis=1)
    else:
        draws = rng.random(count)
        picks = (draws[:, None] > np.cumsum(probs, axis=1)).sum(axis=1)
        picks = np.minimum(picks, mask.sum(axis=1) - 1)
    for row, (lane, pids) in enumerate(zip(lanes, kept)):
        lane.modes.append(True)
        lane.log_probs.append(float(np.log(max(probs[row, picks[row]], 1e-300))))
        lane.apply_extension(int(pids[picks[row]]))


def _step_halts(net, embeddings, lanes, rows, rng, greedy):
    count = len(lanes)
    np_dtype = np.float64 if embeddings.dtype == torch.float64 else np.float32
    summaries = np.asarray([lane.summary() for lane in lanes], dtype=np_dtype)
    pooled = embeddings[torch.as_tensor(rows)].mean(dim=1)
    net_rows = torch.cat([pooled, torch.from_numpy(summaries)], dim=-1)
    p_halt = torch.sigmoid(net.halt_logits(net_rows)).numpy().astype(float)
    if greedy:
        halts = p_halt >= 0.5
    else:
        halts = rng.random(count) < p_halt
    for row, lane in enumerate(lanes):
        chosen_p = p_halt[row] if halts[row] else 1.0 - p_halt[row]
        lane.modes.append(False)
        lane.log_probs.append(float(np.log(max(chosen_p, 1e-300))))
        if halts[row]:
            lane.commit(forced=False)
        else:
            lane.continue_route()


@dataclass(frozen=True)
class BestOfK:
    """Outcome of sampling k rollouts and keeping the cheapest network."""

    best: RolloutResult
    samples: int
    cost_at: dict[int, float]  # best cost after the first m samples, per threshold


def plan_best_of_k(
    model: PolicyModel,
    mdp: TransitMdp,
    k: int,
    rng: np.random.Generator,
    initial_routes: RouteNetwork = (),
    batch_lanes: int | None = None,
    thresholds: tuple[int, ...] = (),
) -> BestOfK:
    """Best of k stochastic rollouts; thresholds record nested partial minima."""
    if k < 1:
        raise ValueError("k must be positive")
    n = mdp.city.num_nodes
    if batch_lanes is None:
        # keep the per-step feature batch cache-friendly
        batch_lanes = int(np.clip(2_000_000 // (n * n * 6), 1, 128))
    marks = sorted(t for t in thresholds if t <= k)
    best: RolloutResult | None = None
    cost_at: dict[int, float] = {}
    done = 0
    while done < k:
        chunk = min(batch_lanes, k - done)
        results = run_batch(model, [(mdp, initial_routes)] * chunk, rng)
        for result in results:
            done += 1
            if best is None or result.cost.total < best.cost.total:
                best = result
            if marks and done == marks[0]:
                cost_at[marks.pop(0)] = best.cost.total
    return BestOfK(best=best, samples=done, cost_at=cost_at)


def evaluate_policy(
    model: PolicyModel,
    mdps: list[TransitMdp],
    k: int,
    rng: np.random.Generator,
    thresholds: tuple[int, ...] = (),
) -> list[BestOfK]:
    """Best-of-k planning for each problem independently."""
    return [plan_best_of_k(model, mdp, k, rng, thresholds=thresholds) for mdp in mdps]
