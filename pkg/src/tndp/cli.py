"""Command-line interface: dataset generation, training, solving, benchmarks."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tndp", description="Transit network design: learned planner + bee colony search"
    )
    sub = parser.add_subparsers(required=True)

    gen = sub.add_parser("citygen", help="generate a synthetic city dataset")
    gen.add_argument("--out", required=True, help="output dataset directory")
    gen.add_argument("--count", type=int, default=256)
    gen.add_argument("--nodes", type=int, default=20)
    gen.add_argument("--generator", default="random")
    gen.add_argument("--side", type=float, default=30_000.0, help="square side in meters")
    gen.add_argument("--speed", type=float, default=15.0, help="vehicle speed in m/s")
    gen.add_argument("--drop-prob", type=float, default=0.1)
    gen.add_argument("--seed", type=int, default=0)
    gen.set_defaults(func=cmd_citygen)

    tr = sub.add_parser("train", help="train the route-planning policy")
    tr.add_argument("--dataset", help="city dataset directory (citygen output)")
    tr.add_argument("--config", help="JSON file with TrainConfig overrides")
    tr.add_argument("--seed", type=int, help="overrides the config seed")
    tr.add_argument("--out", required=True, help="checkpoint output path")
    tr.add_argument("--log", help="JSONL progress log path")
    tr.set_defaults(func=cmd_train)

    so = sub.add_parser("solve", help="solve one instance or city file")
    source = so.add_mutually_exclusive_group(required=True)
    source.add_argument("--city", help="synthetic city file")
    source.add_argument("--instance", help="benchmark instance name")
    so.add_argument("--data-dir", help="benchmark data directory")
    so.add_argument(
        "--algorithm", required=True, choices=["bco", "nbco", "no2nb", "lp"]
    )
    so.add_argument("--alpha", type=float, default=0.5)
    so.add_argument("--beta", type=float, default=5.0)
    so.add_argument("--transfer-penalty", type=float, default=300.0, help="seconds")
    so.add_argument("--num-routes", type=int, help="required with --city")
    so.add_argument("--min-stops", type=int, default=2)
    so.add_argument("--max-stops", type=int, default=8)
    so.add_argument("--seed", type=int, default=0)
    so.add_argument("--checkpoint", help="trained model (nbco, no2nb, lp)")
    so.add_argument("--iterations", type=int, default=400, help="colony iterations")
    so.add_argument("--samples", type=int, default=100, help="rollouts for lp")
    so.add_argument("--out", required=True, help="solution JSON path")
    so.add_argument("--trace", help="JSONL cost trace path")
    so.set_defaults(func=cmd_solve)

    be = sub.add_parser("bench", help="benchmark harness")
    bsub = be.add_subparsers(required=True)

    bf = bsub.add_parser("fetch", help="download/verify benchmark files")
    bf.add_argument("--registry", required=True, help="registry JSON")
    bf.add_argument("--data-dir")
    bf.add_argument("--names", nargs="*")
    bf.set_defaults(func=cmd_bench_fetch)

    br = bsub.add_parser("run", help="run an experiment suite")
    br.add_argument("--config", required=True, help="suite JSON")
    br.add_argument("--data-dir")
    br.add_argument("--out", required=True, help="JSONL run records path")
    br.set_defaults(func=cmd_bench_run)

    ba = bsub.add_parser("aggregate", help="aggregate run records")
    ba.add_argument("--runs", required=True, help="JSONL run records")
    ba.add_argument("--out", required=True, help="CSV output")
    ba.set_defaults(func=cmd_bench_aggregate)

    bp = bsub.add_parser("pareto", help="export passenger/operator trade-off table")
    bp.add_argument("--runs", required=True, help="JSONL run records")
    bp.add_argument("--out", required=True, help="CSV output")
    bp.set_defaults(func=cmd_bench_pareto)

    return parser


def cmd_citygen(args) -> int:
    from .citygen import GenConfig, generate_dataset, write_dataset

    config = GenConfig(
        num_nodes=args.nodes,
        side=args.side,
        vehicle_speed=args.speed,
        edge_drop_prob=args.drop_prob,
        generator=args.generator,
    )
    cities, metas = generate_dataset(config, args.count, args.seed)
    write_dataset(args.out, cities, metas, config, args.seed)
    print(f"wrote {len(cities)} cities to {args.out}")
    return 0


def cmd_train(args) -> int:
    from .citygen import read_dataset
    from .fileio import append_jsonl
    from .training import TrainConfig, make_training_dataset, train

    overrides = {}
    if args.config:
        overrides = json.loads(Path(args.config).read_text())
    if args.seed is not None:
        overrides["seed"] = args.seed
    config = TrainConfig.from_dict(overrides)

    if args.dataset:
        cities, _ = read_dataset(args.dataset)
    else:
        print(f"no dataset given; generating {config.dataset_size} cities")
        cities, _ = make_training_dataset(config)

    log_path = Path(args.log) if args.log else None
    if log_path and log_path.exists():
        log_path.unlink()

    def log_record(record):
        if log_path:
            append_jsonl(log_path, record)

    model, history = train(config, cities, log_record=log_record)
    model.save(args.out, extra={"train_config": json.loads(config.to_json()),
                                "best_epoch": history["best_epoch"]})
    print(
        f"saved {args.out} (best epoch {history['best_epoch']}, "
        f"validation cost {history['validation_costs'][history['best_epoch']]:.4f})"
    )
    return 0


def cmd_solve(args) -> int:
    from .bco import BcoConfig, run_bco
    from .city import all_pairs_shortest_paths, validate_network
    from .costs import CostWeights
    from .fileio import append_jsonl, read_city_file, write_solution
    from .mdp import TransitMdp

    if args.instance:
        from .bench import load_benchmark

        instance = load_benchmark(args.instance, args.data_dir)
        city = instance.city
        num_routes = args.num_routes or instance.num_routes
        min_stops, max_stops = instance.min_stops, instance.max_stops
    else:
        city = read_city_file(args.city)
        if not args.num_routes:
            print("--num-routes is required with --city", file=sys.stderr)
            return 2
        num_routes, min_stops, max_stops = args.num_routes, args.min_stops, args.max_stops

    sp = all_pairs_shortest_paths(city)
    weights = CostWeights.for_problem(
        sp, num_routes, args.alpha, args.beta, args.transfer_penalty
    )
    mdp = TransitMdp(city, sp, weights, num_routes, min_stops, max_stops)
    rng = np.random.default_rng(args.seed)

    model = None
    if args.algorithm in ("nbco", "no2nb", "lp"):
        if not args.checkpoint:
            print(f"--checkpoint is required for {args.algorithm}", file=sys.stderr)
            return 2
        from .policy import PolicyModel

        model = PolicyModel.load(args.checkpoint)

    trace_path = Path(args.trace) if args.trace else None
    if trace_path and trace_path.exists():
        trace_path.unlink()

    if args.algorithm == "lp":
        from .planner import plan_best_of_k

        outcome = plan_best_of_k(model, mdp, args.samples, rng)
        routes, breakdown = outcome.best.routes, outcome.best.cost
        meta = {"algorithm": "lp", "samples": outcome.samples}
    else:
        mix = {"bco": "classic", "nbco": "neural", "no2nb": "neural_only"}[args.algorithm]
        config = BcoConfig(iterations=args.iterations, bee_mix=mix)

        def trace(iteration, best_total):
            if trace_path:
                append_jsonl(trace_path, {"iteration": iteration, "best_total": best_total})

        outcome = run_bco(mdp, config, rng, model=model, trace_callback=trace)
        routes, breakdown = outcome.best_routes, outcome.best_cost
        meta = {
            "algorithm": args.algorithm,
            "iterations": config.iterations,
            "candidates_evaluated": outcome.candidates_evaluated,
        }

    report = validate_network(routes, city, num_routes, min_stops, max_stops)
    meta.update(
        {
            "alpha": args.alpha,
            "beta": args.beta,
            "transfer_penalty": args.transfer_penalty,
            "seed": args.seed,
            "feasible": report.all_ok,
        }
    )
    write_solution(args.out, routes, breakdown, meta)
    print(f"total cost {breakdown.total:.4f} -> {args.out}")
    return 0


def cmd_bench_fetch(args) -> int:
    from .bench import fetch

    ready = fetch(args.registry, args.data_dir, args.names or None)
    print(f"instances ready: {', '.join(ready) if ready else '(none)'}")
    return 0


def cmd_bench_run(args) -> int:
    from .bench import load_benchmark, run_suite

    config = json.loads(Path(args.config).read_text())
    instances = [load_benchmark(name, args.data_dir) for name in config["instances"]]
    out = Path(args.out)
    if out.exists():
        out.unlink()
    results = run_suite(
        instances,
        config["methods"],
        config.get("alphas", [0.0, 0.5, 1.0]),
        config.get("seeds", [0]),
        out_file=out,
    )
    print(f"{len(results)} runs -> {out}")
    return 0


def cmd_bench_aggregate(args) -> int:
    from .bench import aggregate, write_aggregate_csv
    from .fileio import read_jsonl

    rows = aggregate(read_jsonl(args.runs))
    write_aggregate_csv(rows, args.out)
    print(f"{len(rows)} aggregate rows -> {args.out}")
    return 0


def cmd_bench_pareto(args) -> int:
    from .bench import pareto_rows, write_pareto_csv
    from .fileio import read_jsonl

    rows = pareto_rows(read_jsonl(args.runs))
    write_pareto_csv(rows, args.out)
    print(f"{len(rows)} trade-off rows -> {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
